//! Neural layers built on the tape: LSTM / Bi-LSTM, multi-kernel 1-D
//! convolution, dense, dropout and batch normalization.

mod attention;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod lstm;

pub use attention::{Attended, Attention};
pub use batchnorm::{batchnorm_apply, BatchNorm, BatchStats};
pub use conv::{conv1d_forward, Conv1d, Conv1dConfig, Padding};
pub use dense::{dense_forward, Dense};
pub use dropout::{dropout_apply, DropoutSpec};
pub use lstm::{bilstm_encode, lstm_cell_step, BiLstm, Lstm};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: mode, the dropout stream, and batch-norm
/// statistics gathered in train mode for a later running-average update.
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    pub bn_updates: Vec<BatchStats>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        ForwardCtx {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        ForwardCtx::new(Mode::Eval, 0)
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}
