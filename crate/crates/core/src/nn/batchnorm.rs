use super::ForwardCtx;
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, UnaryKind, Var};

/// Per-channel batch normalization over the rows of an `N × C` input.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Batch statistics from one train-mode forward, applied to the running
/// averages afterwards by [`BatchNorm::update_running`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance estimate.
    pub var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            scale: store.add(&format!("{name}.scale"), Tensor::full(&[channels], 1.0)),
            shift: store.add(&format!("{name}.shift"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            channels,
            epsilon: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let (y, stats) = batchnorm_apply(self, tape, store, x, ctx.is_train())?;
        if let Some(s) = stats {
            ctx.bn_updates.push(s);
        }
        Ok(y)
    }

    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running(store: &mut ParamStore, stats: &BatchStats) {
        for (id, batch) in [(stats.running_mean, &stats.mean), (stats.running_var, &stats.var)] {
            let r = store.get_mut(id);
            for (v, b) in r.data_mut().iter_mut().zip(batch.iter()) {
                *v = stats.momentum * *v + (1.0 - stats.momentum) * b;
            }
        }
    }
}

/// Normalizes each column of `x`. In train mode the batch (row) statistics
/// are used and returned; in eval mode the running statistics are used.
pub fn batchnorm_apply(bn: &BatchNorm, tape: &mut Tape, store: &ParamStore, x: Var, train: bool) -> Result<(Var, Option<BatchStats>)> {
    let (n, c) = (tape.value(x).rows(), tape.value(x).cols());
    if c != bn.channels {
        bail!(Dimension, "batch norm over {} channels got input {:?}", bn.channels, tape.shape(x));
    }
    if bn.epsilon <= 0.0 {
        bail!(Config, "batch norm epsilon must be positive");
    }
    let scale = tape.param(store, bn.scale);
    let shift = tape.param(store, bn.shift);
    let (normalized, stats) = if train {
        if n < 2 {
            bail!(Contract, "batch norm in train mode needs at least 2 rows, got {n}");
        }
        let mean = tape.mean_rows(x)?;
        let neg_mean = tape.scale(mean, -1.0)?;
        let centered = tape.add_row(x, neg_mean)?;
        let sq = tape.unary(UnaryKind::Square, centered)?;
        let var = tape.mean_rows(sq)?;
        let var_eps = tape.add_scalar(var, bn.epsilon)?;
        let std = tape.unary(UnaryKind::Sqrt, var_eps)?;
        let inv = tape.unary(UnaryKind::Recip, std)?;
        let normalized = tape.mul_row(centered, inv)?;
        let biased = tape.value(var).data();
        let stats = BatchStats {
            running_mean: bn.running_mean,
            running_var: bn.running_var,
            momentum: bn.momentum,
            mean: tape.value(mean).data().to_vec(),
            var: biased.iter().map(|v| v * n as f64 / (n - 1) as f64).collect(),
        };
        (normalized, Some(stats))
    } else {
        let rm = store.get(bn.running_mean);
        let rv = store.get(bn.running_var);
        let neg_mean = tape.leaf(rm.map(|v| -v))?;
        let inv = tape.leaf(rv.map(|v| 1.0 / (v + bn.epsilon).sqrt()))?;
        let centered = tape.add_row(x, neg_mean)?;
        (tape.mul_row(centered, inv)?, None)
    };
    let scaled = tape.mul_row(normalized, scale)?;
    Ok((tape.add_row(scaled, shift)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column_moments(t: &Tensor, c: usize) -> (f64, f64) {
        let n = t.rows() as f64;
        let mean = (0..t.rows()).map(|i| t.at(i, c)).sum::<f64>() / n;
        let var = (0..t.rows()).map(|i| (t.at(i, c) - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn standardized_batch_is_a_fixed_point() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 1);
        // The default epsilon alone shifts a unit-variance batch by ~5e-6·|x|.
        bn.epsilon = 1e-12;
        let x = [-1.5, -0.5, 0.5, 1.5];
        let (m, v) = (0.0, x.iter().map(|a| a * a).sum::<f64>() / 4.0);
        let std: Vec<f64> = x.iter().map(|a| (a - m) / v.sqrt()).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(4, 1, std.clone()).unwrap()).unwrap();
        let (y, _) = batchnorm_apply(&bn, &mut tape, &store, xv, true).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&std) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_channel_maps_to_shift() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        store.set(bn.shift, Tensor::vector(vec![0.25, -3.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let xv = tape
            .leaf(Tensor::matrix(3, 2, vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap())
            .unwrap();
        let (y, _) = batchnorm_apply(&bn, &mut tape, &store, xv, true).unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(y).at(i, 0), 0.25);
        }
    }

    #[test]
    fn random_batch_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let data: Vec<f64> = (0..64 * 3).map(|_| rng.gen_range(-10.0..10.0) + 4.0).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(64, 3, data).unwrap()).unwrap();
        let (y, stats) = batchnorm_apply(&bn, &mut tape, &store, xv, true).unwrap();
        for c in 0..3 {
            let (m, v) = column_moments(tape.value(y), c);
            assert!(m.abs() < 1e-10, "mean {m}");
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
        assert!(stats.unwrap().var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_row_train_is_rejected_but_eval_is_fine() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::row(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(batchnorm_apply(&bn, &mut tape, &store, xv, true).unwrap_err().kind(), "contract");
        let (y, s) = batchnorm_apply(&bn, &mut tape, &store, xv, false).unwrap();
        assert!(s.is_none());
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((tape.value(y).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn running_stats_follow_ema() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap()).unwrap();
        let (_, s) = batchnorm_apply(&bn, &mut tape, &store, xv, true).unwrap();
        BatchNorm::update_running(&mut store, &s.unwrap());
        assert!((store.get(bn.running_mean).data()[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance 2.0
        assert!((store.get(bn.running_var).data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
