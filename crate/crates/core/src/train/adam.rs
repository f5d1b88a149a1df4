use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter slot.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor, Tensor)> {
        self.moments.get(id.index()).and_then(Option::as_ref)
    }
}

/// Gradient of every id in `ids`; ids the loss never touched get zeros.
pub fn collect_grads(store: &ParamStore, ids: &[ParamId], grads: &Gradients) -> Vec<(ParamId, Tensor)> {
    ids.iter()
        .map(|&id| {
            let g = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
            (id, g)
        })
        .collect()
}

/// One bias-corrected Adam update. Any non-finite gradient aborts before a
/// single parameter moves.
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
    for (id, g) in grads {
        if !g.is_finite() {
            bail!(Numeric, "non-finite gradient for {}", store.name(*id));
        }
        if g.shape() != store.get(*id).shape() {
            bail!(
                Dimension,
                "gradient {:?} for {} shaped {:?}",
                g.shape(),
                store.name(*id),
                store.get(*id).shape()
            );
        }
    }
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for (id, g) in grads {
        let i = id.index();
        if state.moments.len() <= i {
            state.moments.resize(i + 1, None);
        }
        let (m, v) = state.moments[i].get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
        let theta = store.get_mut(*id).data_mut();
        for (((p, mi), vi), &gi) in theta.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let (mh, vh) = (*mi / c1, *vi / c2);
            *p -= lr * mh / (vh.sqrt() + epsilon);
        }
    }
    Ok(())
}
