use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};

/// `|a − n| / (|a| + |n| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        bail!(Contract, "checked function must return a scalar, got {:?}", t.shape());
    }
    Ok(t.data()[0])
}

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns the largest relative error over all coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |input: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(input.clone())?;
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let loss = f(&mut tape, xv)?;
    let base = scalar_of(&tape, loss)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    if eval(x)?.to_bits() != base.to_bits() {
        bail!(Oracle, "function under check is not deterministic");
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub coordinates: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst_pair: (f64, f64),
}

/// Finite-difference check of a loss with respect to stored parameters.
///
/// With `sample = Some((k, seed))` only `k` coordinates per parameter tensor
/// are probed, chosen by a seeded draw; `None` probes every coordinate.
pub fn param_grad_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    sample_per_tensor: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    param_grad_check_with(store, ids, f, Stencil::ThreePoint, &[h], 0.0, sample_per_tensor)
}

/// Central difference formula used for the numeric derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    ThreePoint,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, alongside the
    /// second-order one-sided estimates from the same four evaluations.
    /// The estimate closest to the analytic value counts, so an activation
    /// kink on one side of `x` does not mask the derivative on the other.
    FivePoint,
}

/// Like [`param_grad_check`], but each coordinate walks down `steps`
/// until its relative error drops below `tolerance / 10`, keeping the smallest
/// error seen. Large steps beat round-off on tiny derivatives; small steps
/// avoid activation kinks lying within reach of a large one. A wrong
/// analytic derivative disagrees at every step.
pub fn param_grad_check_with<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    stencil: Stencil,
    steps: &[f64],
    tolerance: f64,
    sample_per_tensor: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if steps.is_empty() || steps.iter().any(|&h| !(h > 0.0)) {
        bail!(Contract, "finite-difference steps must be positive, got {steps:?}");
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let base = scalar_of(&tape, loss)?;
    let grads = tape.backward(loss)?;
    if eval(store)?.to_bits() != base.to_bits() {
        bail!(Oracle, "loss under check is not deterministic");
    }

    let mut rng = sample_per_tensor.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_error: 0.0,
        coordinates: 0,
        worst: None,
        worst_pair: (0.0, 0.0),
    };
    for &id in ids {
        let n = store.get(id).numel();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let coords: Vec<usize> = match (&mut rng, sample_per_tensor) {
            (Some(rng), Some((k, _))) if k < n => {
                let mut c = sample(rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[i] = orig + offset;
                let v = eval(&probe);
                probe.get_mut(id).data_mut()[i] = orig;
                v
            };
            let a = analytic.data()[i];
            let mut best: Option<(f64, f64)> = None;
            for &h in steps {
                let numeric = match stencil {
                    Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
                    Stencil::FivePoint => {
                        // differences first, so a flat loss gives exactly zero
                        let (p1, p2) = (at(h)? - base, at(2.0 * h)? - base);
                        let (m1, m2) = (base - at(-h)?, base - at(-2.0 * h)?);
                        let central = (8.0 * (p1 + m1) - (p2 + m2)) / (12.0 * h);
                        let right = (4.0 * p1 - p2) / (2.0 * h);
                        let left = (4.0 * m1 - m2) / (2.0 * h);
                        [central, right, left]
                            .into_iter()
                            .min_by(|x, y| relative_error(a, *x).total_cmp(&relative_error(a, *y)))
                            .expect("three estimates")
                    }
                };
                let err = relative_error(a, numeric);
                if best.is_none_or(|(e, _)| err < e) {
                    best = Some((err, numeric));
                }
                // a tenth of the tolerance leaves room for truncation error
                // at the larger steps
                if err < 0.1 * tolerance {
                    break;
                }
            }
            let (err, numeric) = best.expect("at least one step");
            report.coordinates += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                report.worst = Some((store.name(id).to_string(), i));
                report.worst_pair = (a, numeric);
            }
        }
    }
    Ok(report)
}
