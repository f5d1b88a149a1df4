use rand::Rng;

use super::ForwardCtx;
use crate::error::{bail, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            bail!(Config, "dropout rate {rate} outside [0, 1)");
        }
        Ok(DropoutSpec { rate })
    }

    /// Seeded draw in `[lo, hi]`, used once per run for the convolutional stack.
    pub fn drawn(lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        if lo > hi {
            bail!(Config, "dropout range [{lo}, {hi}] is empty");
        }
        DropoutSpec::new(if lo == hi { lo } else { rng.gen_range(lo..=hi) })
    }
}

/// Inverted dropout. Identity (the same handle) in eval mode or at rate 0.
pub fn dropout_apply(spec: &DropoutSpec, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    if !(0.0..1.0).contains(&spec.rate) {
        bail!(Config, "dropout rate {} outside [0, 1)", spec.rate);
    }
    if !ctx.is_train() || spec.rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - spec.rate;
    let scale = 1.0 / keep;
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n).map(|_| if ctx.rng.gen::<f64>() < keep { scale } else { 0.0 }).collect();
    let m = tape.leaf(Tensor::new(shape, mask)?)?;
    tape.mul(x, m)
}
