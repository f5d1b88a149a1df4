use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{Axis, Tape, Tensor, UnaryKind, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Mae => "mae",
        }
    }
}

/// `−ln probs[gold]` for one distribution.
pub fn cross_entropy(probs: &[f64], gold: usize) -> Result<f64> {
    if gold >= probs.len() {
        bail!(Contract, "gold class {gold} out of range for {} classes", probs.len());
    }
    let p = probs[gold];
    if !(p > 0.0) {
        bail!(Numeric, "probability of the gold class is {p}");
    }
    Ok(-p.ln())
}

/// Mean absolute difference of two equally shaped tensors.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        bail!(Dimension, "MAE of {:?} and {:?}", pred.shape(), target.shape());
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.numel() as f64)
}

fn one_hot(golds: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; golds.len() * classes];
    for (i, &g) in golds.iter().enumerate() {
        if g >= classes {
            bail!(Contract, "gold class {g} out of range for {classes} classes");
        }
        data[i * classes + g] = 1.0;
    }
    Tensor::matrix(golds.len(), classes, data)
}

fn check_rows(tape: &Tape, logits: Var, golds: &[usize]) -> Result<(usize, usize)> {
    let v = tape.value(logits);
    if v.ndim() != 2 || v.rows() != golds.len() {
        bail!(Dimension, "{} gold labels for logits {:?}", golds.len(), v.shape());
    }
    Ok((v.rows(), v.cols()))
}

/// Summed (not averaged) cross-entropy of `n × K` logits against gold
/// indices, via a max-shifted log-sum-exp so no probability is ever logged.
pub fn cross_entropy_sum(tape: &mut Tape, logits: Var, golds: &[usize]) -> Result<Var> {
    let (n, k) = check_rows(tape, logits, golds)?;
    let v = tape.value(logits);
    let mut shift = Vec::with_capacity(n * k);
    for i in 0..n {
        let m = v.row_slice(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(std::iter::repeat_n(m, k));
    }
    let shift = tape.leaf(Tensor::matrix(n, k, shift)?)?;
    let shifted = tape.sub(logits, shift)?;
    let exps = tape.unary(UnaryKind::Exp, shifted)?;
    let ones = tape.leaf(Tensor::full(&[k, 1], 1.0))?;
    let sums = tape.matmul(exps, ones)?;
    let lse = tape.unary(UnaryKind::Log, sums)?;
    let mask = tape.leaf(one_hot(golds, k)?)?;
    let picked = tape.mul(shifted, mask)?;
    let gold = tape.matmul(picked, ones)?;
    let per_row = tape.sub(lse, gold)?;
    tape.sum(per_row)
}

/// Summed per-row MAE between `softmax(logits)` and one-hot targets. Each
/// row contributes `mean_k |p_k − y_k|`.
pub fn mae_sum(tape: &mut Tape, logits: Var, golds: &[usize]) -> Result<Var> {
    let (_, k) = check_rows(tape, logits, golds)?;
    let probs = tape.softmax(logits, Axis::Cols)?;
    let target = tape.leaf(one_hot(golds, k)?)?;
    let diff = tape.sub(probs, target)?;
    let abs = tape.unary(UnaryKind::Abs, diff)?;
    let total = tape.sum(abs)?;
    tape.scale(total, 1.0 / k as f64)
}

pub fn loss_sum(kind: LossKind, tape: &mut Tape, logits: Var, golds: &[usize]) -> Result<Var> {
    match kind {
        LossKind::CrossEntropy => cross_entropy_sum(tape, logits, golds),
        LossKind::Mae => mae_sum(tape, logits, golds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        for k in [2usize, 3, 7] {
            let u = vec![1.0 / k as f64; k];
            assert!((cross_entropy(&u, 0).unwrap() - (k as f64).ln()).abs() < 1e-12);
        }
        assert_eq!(cross_entropy(&[0.5, 0.5], 2).unwrap_err().kind(), "contract");
    }

    /// ln(p) from the series ln(p) = 2·atanh((p−1)/(p+1)), summed far past
    /// convergence.
    fn series_ln(p: f64) -> f64 {
        let y = (p - 1.0) / (p + 1.0);
        let mut term = y;
        let mut acc = 0.0;
        for n in 0..2000 {
            acc += term / (2 * n + 1) as f64;
            term *= y * y;
        }
        2.0 * acc
    }

    #[test]
    fn cross_entropy_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let g = rng.gen_range(0..5);
            assert!((cross_entropy(&p, g).unwrap() + series_ln(p[g])).abs() < 1e-12);
        }
    }

    #[test]
    fn mae_cases() {
        let t = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert!((mae(&t.map(|v| v + 1.0), &t).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut expect = 0.0;
        for i in 0..12 {
            expect += (a[i] - b[i]).abs() / 12.0;
        }
        let (ta, tb) = (Tensor::matrix(3, 4, a).unwrap(), Tensor::matrix(3, 4, b).unwrap());
        assert!((mae(&ta, &tb).unwrap() - expect).abs() < 1e-12);
        assert_eq!(mae(&ta, &Tensor::zeros(&[4, 3])).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn tape_cross_entropy_matches_plain_formula() {
        let logits = Tensor::from_rows(&[vec![0.2, -1.0, 3.0], vec![500.0, 0.0, -500.0]]).unwrap();
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone()).unwrap();
        let loss = cross_entropy_sum(&mut tape, l, &[1, 0]).unwrap();
        let row0: f64 = [0.2f64, -1.0, 3.0].iter().map(|v| v.exp()).sum();
        let expect = row0.ln() + 1.0;
        assert!((tape.value(loss).data()[0] - expect).abs() < 1e-12);
        let err = finite_diff_check(|t, v| cross_entropy_sum(t, v, &[2, 1]), &logits.map(|v| v / 100.0), 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn tape_mae_gradient() {
        let logits = Tensor::from_rows(&[vec![0.3, -0.4], vec![1.1, 0.2]]).unwrap();
        let err = finite_diff_check(|t, v| mae_sum(t, v, &[0, 1]), &logits, 1e-5).unwrap();
        assert!(err < 1e-6);
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::row(vec![0.0, 0.0]).unwrap()).unwrap();
        let loss = mae_sum(&mut tape, l, &[1]).unwrap();
        assert!((tape.value(loss).data()[0] - 0.5).abs() < 1e-15);
    }
}
