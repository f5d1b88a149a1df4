use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_uniform, BatchNorm, ForwardCtx};
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding keeping `ceil(T / stride)` output steps.
    Same,
    /// No padding; `(T − k) / stride + 1` output steps.
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Conv1dConfig {
    pub kernel_sizes: Vec<usize>,
    /// Output channels per kernel size.
    pub channels: usize,
    pub stride: usize,
    pub padding: Padding,
    pub batch_norm: bool,
    pub relu: bool,
}

impl Default for Conv1dConfig {
    fn default() -> Self {
        Conv1dConfig {
            kernel_sizes: vec![3, 5, 7, 9],
            channels: 200,
            stride: 1,
            padding: Padding::Same,
            batch_norm: true,
            relu: true,
        }
    }
}

impl Conv1dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            bail!(Config, "convolution needs at least one kernel size");
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k % 2 == 0) {
            bail!(Config, "kernel size {k} must be odd and positive");
        }
        if self.channels == 0 || self.stride == 0 {
            bail!(Config, "convolution channels and stride must be positive");
        }
        if self.padding == Padding::Valid {
            let first = self.kernel_sizes[0];
            if self.kernel_sizes.iter().any(|&k| k != first) {
                bail!(
                    Config,
                    "valid padding with mixed kernel sizes {:?} yields unaligned feature maps",
                    self.kernel_sizes
                );
            }
        }
        Ok(())
    }

    pub fn output_len(&self, input_len: usize, kernel: usize) -> Option<usize> {
        match self.padding {
            Padding::Same => Some(input_len.div_ceil(self.stride)),
            Padding::Valid if input_len >= kernel => Some((input_len - kernel) / self.stride + 1),
            Padding::Valid => None,
        }
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel_sizes.len() * self.channels
    }
}

#[derive(Clone, Debug)]
struct KernelBank {
    size: usize,
    weight: ParamId,
    bias: ParamId,
    bn: Option<BatchNorm>,
}

/// A bank of 1-D convolutions over time with different kernel sizes whose
/// feature maps are concatenated channel-wise.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub config: Conv1dConfig,
    pub in_channels: usize,
    banks: Vec<KernelBank>,
}

impl Conv1d {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, config: Conv1dConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let banks = config
            .kernel_sizes
            .iter()
            .map(|&k| {
                let fan_in = k * in_channels;
                KernelBank {
                    size: k,
                    weight: store.add(
                        &format!("{name}.k{k}.weight"),
                        init_uniform(&[config.channels, fan_in], fan_in, rng),
                    ),
                    bias: store.add(&format!("{name}.k{k}.bias"), Tensor::zeros(&[config.channels])),
                    bn: config
                        .batch_norm
                        .then(|| BatchNorm::new(store, &format!("{name}.k{k}.bn"), config.channels)),
                }
            })
            .collect();
        Ok(Conv1d {
            config,
            in_channels,
            banks,
        })
    }

    pub fn weight(&self, kernel: usize) -> Option<ParamId> {
        self.banks.iter().find(|b| b.size == kernel).map(|b| b.weight)
    }

    pub fn bias(&self, kernel: usize) -> Option<ParamId> {
        self.banks.iter().find(|b| b.size == kernel).map(|b| b.bias)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        conv1d_forward(self, tape, store, x, ctx)
    }
}

/// Cross-correlation over time for each kernel size (weights laid out as
/// `channels × (kernel · in_channels)`, tap-major), then optional batch
/// norm and ReLU, then channel-wise concatenation.
pub fn conv1d_forward(conv: &Conv1d, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    let (t_in, c) = (tape.value(x).rows(), tape.value(x).cols());
    if c != conv.in_channels {
        bail!(
            Dimension,
            "convolution expects {} input channels, got {:?}",
            conv.in_channels,
            tape.shape(x)
        );
    }
    let cfg = &conv.config;
    let mut maps = Vec::with_capacity(conv.banks.len());
    for bank in &conv.banks {
        let Some(out_len) = cfg.output_len(t_in, bank.size) else {
            bail!(
                Dimension,
                "input of length {t_in} is shorter than kernel {} under valid padding",
                bank.size
            );
        };
        let pad_left = match cfg.padding {
            Padding::Same => (bank.size - 1) / 2,
            Padding::Valid => 0,
        };
        let cols = tape.unfold(x, bank.size, cfg.stride, pad_left, out_len)?;
        let w = tape.param(store, bank.weight);
        let b = tape.param(store, bank.bias);
        let mut y = tape.linear(cols, w, Some(b))?;
        if let Some(bn) = &bank.bn {
            y = bn.forward(tape, store, y, ctx)?;
        }
        if cfg.relu {
            y = tape.relu(y)?;
        }
        maps.push(y);
    }
    tape.concat(&maps, Axis::Cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain(kernels: Vec<usize>, channels: usize, padding: Padding) -> Conv1dConfig {
        Conv1dConfig {
            kernel_sizes: kernels,
            channels,
            stride: 1,
            padding,
            batch_norm: false,
            relu: false,
        }
    }

    fn run(conv: &Conv1d, store: &ParamStore, input: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input)?;
        let y = conv1d_forward(conv, &mut tape, store, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Direct nested-loop cross-correlation with zero padding.
    fn oracle(x: &Tensor, w: &Tensor, b: &Tensor, k: usize, pad_left: usize, out_len: usize) -> Vec<Vec<f64>> {
        let (t_in, c) = (x.rows(), x.cols());
        let mut out = vec![vec![0.0; w.rows()]; out_len];
        for (t, row) in out.iter_mut().enumerate() {
            for (o, v) in row.iter_mut().enumerate() {
                let mut acc = b.data()[o];
                for j in 0..k {
                    let src = t as isize + j as isize - pad_left as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    for ch in 0..c {
                        acc += w.at(o, j * c + ch) * x.at(src as usize, ch);
                    }
                }
                *v = acc;
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, "c", 1, plain(vec![3], 1, Padding::Valid), &mut rng).unwrap();
        store
            .set(conv.weight(3).unwrap(), Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap())
            .unwrap();
        let y = run(&conv, &store, Tensor::matrix(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn box_kernel_hand_sum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, "c", 1, plain(vec![3], 1, Padding::Valid), &mut rng).unwrap();
        store
            .set(conv.weight(3).unwrap(), Tensor::matrix(1, 3, vec![1.0; 3]).unwrap())
            .unwrap();
        let y = run(&conv, &store, Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[6.0, 9.0]);
    }

    #[test]
    fn too_short_for_valid_padding() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, "c", 1, plain(vec![5], 1, Padding::Valid), &mut rng).unwrap();
        let err = run(&conv, &store, Tensor::matrix(4, 1, vec![0.0; 4]).unwrap()).unwrap_err();
        assert_eq!(err.kind(), "dimension");
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(plain(vec![4], 1, Padding::Same).validate().is_err());
        assert!(plain(vec![3, 5], 1, Padding::Valid).validate().is_err());
    }

    #[test]
    fn matches_nested_loop_oracle_for_lengths_up_to_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for len in 1..=32 {
            let mut store = ParamStore::new();
            let conv = Conv1d::new(&mut store, "c", 3, plain(vec![1, 3, 5, 7], 2, Padding::Same), &mut rng).unwrap();
            for k in [1, 3, 5, 7] {
                let b = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                store.set(conv.bias(k).unwrap(), Tensor::vector(b).unwrap()).unwrap();
            }
            let x = crate::nn::init_uniform(&[len, 3], 1, &mut rng);
            let y = run(&conv, &store, x.clone()).unwrap();
            assert_eq!(y.shape(), &[len, 8]);
            for (bank, k) in [1usize, 3, 5, 7].iter().enumerate() {
                let w = store.get(conv.weight(*k).unwrap());
                let b = store.get(conv.bias(*k).unwrap());
                let expect = oracle(&x, w, b, *k, (k - 1) / 2, len);
                for t in 0..len {
                    for o in 0..2 {
                        assert!((y.at(t, bank * 2 + o) - expect[t][o]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn strided_valid_output_length() {
        let cfg = Conv1dConfig {
            stride: 2,
            ..plain(vec![3], 1, Padding::Valid)
        };
        assert_eq!(cfg.output_len(9, 3), Some(4));
        assert_eq!(cfg.output_len(2, 3), None);
    }
}
