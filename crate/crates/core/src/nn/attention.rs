use rand::Rng;

use super::init_uniform;
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};

/// Scored temporal attention: `m_i = tanh(h_i)`, `s_i = w·m_i + b`,
/// `a = softmax(s)` over time, `r_i = a_i h_i`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

/// Result of pooling a `T × W` sequence.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `T × 1`, nonnegative, summing to one.
    pub weights: Var,
    /// `T × W`, row `i` scaled by its weight.
    pub weighted: Var,
    /// `1 × W`, the sum of the weighted rows.
    pub pooled: Var,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Attention {
            weight: store.add(&format!("{name}.weight"), init_uniform(&[1, width], width, rng)),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[1])),
            width,
        }
    }

    /// Unnormalized scores `w·tanh(h_i) + b`, `T × 1`.
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[1] != self.width {
            bail!(Dimension, "attention of width {} over {:?}", self.width, shape);
        }
        if shape[0] == 0 {
            bail!(Contract, "attention over an empty sequence");
        }
        let m = tape.tanh(h)?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(m, w, Some(b))
    }

    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Attended> {
        let s = self.scores(tape, store, h)?;
        let weights = tape.softmax(s, Axis::Rows)?;
        let weighted = tape.mul_col(h, weights)?;
        let wt = tape.transpose(weights)?;
        let pooled = tape.matmul(wt, h)?;
        Ok(Attended { weights, weighted, pooled })
    }
}
