//! Seeded finite-difference checks over every layer and the full fused
//! model at micro size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::AudioInputs;
use crate::config::GradCheckConfig;
use crate::error::{bail, Result};
use crate::fusion::{modality_attention, FusionConfig};
use crate::model::{Model, ModelConfig, AUDIO_PREFIX, FUSION_PREFIX, TEXT_PREFIX};
use crate::nn::{init_uniform, Attention, BatchNorm, BiLstm, Conv1d, Conv1dConfig, Dense, ForwardCtx, Lstm, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{finite_diff_check, param_grad_check_with, Axis, Stencil, Tape, Tensor, Var};
use crate::text::TextBranchConfig;
use crate::train::{cross_entropy_sum, derive_seed, mae_sum};

/// Worst relative error of one named check within one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub coordinates: usize,
    /// Parameter name and flat index of the worst coordinate, when the
    /// check is over stored parameters.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub trials: usize,
    pub tolerance: f64,
    /// Per check, the worst result over all trials.
    pub checks: Vec<CheckResult>,
    /// `(trial, check)` pairs that exceeded the tolerance.
    pub failures: Vec<(usize, &'static str)>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    init_uniform(shape, 1, rng)
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output coordinate matters
/// with a different weight.
fn weighted_sum(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let r = tape.leaf(r.clone())?;
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

/// Parameter check with the five-point stencil down the configured step
/// ladder.
fn from_params(
    name: &'static str,
    cfg: &GradCheckConfig,
    store: &ParamStore,
    ids: &[ParamId],
    sample: Option<(usize, u64)>,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<CheckResult> {
    let report = param_grad_check_with(store, ids, f, Stencil::FivePoint, &cfg.steps, cfg.tolerance, sample)?;
    Ok(CheckResult {
        name,
        max_error: report.max_error,
        coordinates: report.coordinates,
        worst: report.worst,
        worst_pair: Some(report.worst_pair),
    })
}

fn from_input(name: &'static str, x: &Tensor, h: f64, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> Result<CheckResult> {
    Ok(CheckResult {
        name,
        max_error: finite_diff_check(f, x, h)?,
        coordinates: x.numel(),
        worst: None,
        worst_pair: None,
    })
}

/// A single-layer parameter check whose loss is a random weighting of the
/// layer output.
fn layer_check(
    name: &'static str,
    cfg: &GradCheckConfig,
    store: &ParamStore,
    ids: &[ParamId],
    weights: &Tensor,
    forward: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<CheckResult> {
    from_params(name, cfg, store, ids, None, |tape, s| {
        let out = forward(tape, s)?;
        weighted_sum(tape, out, weights)
    })
}

/// Micro architecture of the full-model check.
pub fn micro_model_config(cfg: &GradCheckConfig) -> ModelConfig {
    let conv = Conv1dConfig {
        kernel_sizes: vec![1, 3],
        channels: 2,
        ..Conv1dConfig::default()
    };
    let mut audio = crate::audio::AudioBranchConfig::default();
    audio.lstm_hidden = cfg.hidden;
    audio.asv_width = cfg.hidden;
    audio.conv = conv.clone();
    ModelConfig {
        audio,
        text: TextBranchConfig {
            lstm_hidden: cfg.hidden,
            tsv_width: cfg.hidden,
            conv: Conv1dConfig { batch_norm: false, ..conv },
            ..TextBranchConfig::default()
        },
        fusion: FusionConfig {
            context_hidden: cfg.hidden,
            shared_width: cfg.hidden,
            classes: 2,
            dropout: 0.4,
        },
    }
}

/// Every layer, the losses and the attention maps, then the whole fused
/// model. Input-gradient checks use a three-point step of 1e-5.
pub fn grad_check_trial(cfg: &GradCheckConfig, trial: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let seed = derive_seed(seed, &[trial as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_input = 1e-5;
    let (t, w, hid) = (rng.gen_range(2..=5), 3, 3);
    let x = random(&[t, w], &mut rng);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "dense", w, 4, true, &mut rng);
    let r = random(&[t, 4], &mut rng);
    let ids = store.trainable_ids();
    out.push(layer_check("dense", cfg, &store, &ids, &r, |tape, s| {
        let xv = tape.leaf(x.clone())?;
        dense.forward(tape, s, xv)
    })?);

    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "lstm", w, hid, &mut rng);
    let r = random(&[t, hid], &mut rng);
    let ids = store.trainable_ids();
    out.push(layer_check("lstm", cfg, &store, &ids, &r, |tape, s| {
        let xv = tape.leaf(x.clone())?;
        let hs = lstm.run(tape, s, xv, false)?;
        tape.concat(&hs, Axis::Rows)
    })?);

    let mut store = ParamStore::new();
    let bilstm = BiLstm::new(&mut store, "bilstm", w, hid, &mut rng);
    let r = random(&[t, 2 * hid], &mut rng);
    let ids = store.trainable_ids();
    out.push(layer_check("bilstm", cfg, &store, &ids, &r, |tape, s| {
        let xv = tape.leaf(x.clone())?;
        bilstm.encode(tape, s, xv)
    })?);

    for (name, batch_norm) in [("conv1d", false), ("conv1d_batchnorm", true)] {
        let mut store = ParamStore::new();
        let conv_cfg = Conv1dConfig {
            kernel_sizes: vec![1, 3],
            channels: 2,
            batch_norm,
            ..Conv1dConfig::default()
        };
        let conv = Conv1d::new(&mut store, "conv", w, conv_cfg.clone(), &mut rng)?;
        let skip: Vec<ParamId> = if batch_norm {
            conv_cfg.kernel_sizes.iter().filter_map(|&k| conv.bias(k)).collect()
        } else {
            Vec::new()
        };
        let ids: Vec<ParamId> = store.trainable_ids().into_iter().filter(|id| !skip.contains(id)).collect();
        let r = random(&[t, conv_cfg.out_channels()], &mut rng);
        out.push(layer_check(name, cfg, &store, &ids, &r, |tape, s| {
            let xv = tape.leaf(x.clone())?;
            conv.forward(tape, s, xv, &mut ForwardCtx::new(Mode::Train, 0))
        })?);
    }

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", w);
    for id in store.trainable_ids() {
        let v = random(store.get(id).shape(), &mut rng);
        store.set(id, v)?;
    }
    let r = random(&[t, w], &mut rng);
    let ids = store.trainable_ids();
    out.push(layer_check("batchnorm", cfg, &store, &ids, &r, |tape, s| {
        let xv = tape.leaf(x.clone())?;
        bn.forward(tape, s, xv, &mut ForwardCtx::new(Mode::Train, 0))
    })?);

    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "attention", w, &mut rng);
    let r = random(&[1, w], &mut rng);
    out.push(layer_check("attention", cfg, &store, &[att.weight], &r, |tape, s| {
        let xv = tape.leaf(x.clone())?;
        Ok(att.attend(tape, s, xv)?.pooled)
    })?);
    let r_in = random(&[1, w], &mut rng);
    out.push(from_input("attention_input", &x, h_input, |tape, xv| {
        let a = att.attend(tape, &store, xv)?;
        weighted_sum(tape, a.pooled, &r_in)
    })?);

    // query row and context rows packed into one input
    let packed = random(&[t + 1, w], &mut rng);
    let r = random(&[1, w], &mut rng);
    out.push(from_input("modality_attention", &packed, h_input, |tape, p| {
        let e = tape.slice_rows(p, 0, 1)?;
        let ctx = tape.slice_rows(p, 1, t)?;
        let (_, z) = modality_attention(tape, e, ctx)?;
        weighted_sum(tape, z, &r)
    })?);

    let k = 3;
    let logits = random(&[t, k], &mut rng).map(|v| 3.0 * v);
    let golds: Vec<usize> = (0..t).map(|_| rng.gen_range(0..k)).collect();
    out.push(from_input("cross_entropy", &logits, h_input, |tape, l| {
        cross_entropy_sum(tape, l, &golds)
    })?);
    out.push(from_input("mae", &logits, h_input, |tape, l| mae_sum(tape, l, &golds))?);

    out.push(full_model_check(cfg, &mut rng)?);
    Ok(out)
}

/// Cross-entropy of the fused model over one video of `cfg.utterances`
/// random utterances, with dropout active under a fixed mask seed.
fn full_model_check(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let config = micro_model_config(cfg);
    let (model, mut store) = Model::new(config.clone(), cfg.embedding_width, 0.3, rng.gen())?;
    // move off the initial point: zero biases put a ReLU exactly on its
    // kink whenever its input row is zero
    for id in store.trainable_ids() {
        let mut moved = store.get(id).clone();
        for v in moved.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
        store.set(id, moved)?;
    }
    let mut inputs = Vec::with_capacity(cfg.utterances);
    let mut texts = Vec::with_capacity(cfg.utterances);
    for _ in 0..cfg.utterances {
        let frames = rng.gen_range(3..=6);
        inputs.push(AudioInputs {
            features: random(&[frames, config.audio.lstm_input_width()], rng),
            spectrogram: random(&[frames, config.audio.cnn_input_width()], rng),
        });
        let tokens = rng.gen_range(2..=5);
        texts.push(random(&[tokens, config.text.input_width(cfg.embedding_width)], rng));
    }
    let golds: Vec<usize> = (0..cfg.utterances).map(|_| rng.gen_range(0..2)).collect();
    let mask_seed: u64 = rng.gen();

    let skip = model.shift_invariant_params();
    let ids: Vec<ParamId> = Model::params_under(&store, &[AUDIO_PREFIX, TEXT_PREFIX, FUSION_PREFIX])
        .into_iter()
        .filter(|id| !skip.contains(id))
        .collect();
    let loss = |tape: &mut Tape, s: &ParamStore| -> Result<Var> {
        let mut ctx = ForwardCtx::new(Mode::Train, mask_seed);
        let mut asv = Vec::new();
        let mut tsv = Vec::new();
        for (a, e) in inputs.iter().zip(&texts) {
            asv.push(model.audio.forward(tape, s, a, &mut ctx)?.asv);
            tsv.push(model.text.forward(tape, s, e, &mut ctx)?.tsv);
        }
        let asv = tape.concat(&asv, Axis::Rows)?;
        let tsv = tape.concat(&tsv, Axis::Rows)?;
        let fused = model.fusion.forward(tape, s, asv, tsv, &mut ctx)?;
        cross_entropy_sum(tape, fused.logits, &golds)
    };
    let sample = Some((cfg.coordinates, rng.gen()));
    from_params("fused_model", cfg, &store, &ids, sample, loss)
}

/// Runs `cfg.trials` trials and reports each to `on_trial` as it finishes.
pub fn run_grad_check(cfg: &GradCheckConfig, seed: u64, on_trial: &mut dyn FnMut(usize, &[CheckResult])) -> Result<GradCheckSummary> {
    if cfg.trials == 0 || cfg.utterances == 0 || cfg.hidden == 0 || cfg.embedding_width == 0 {
        bail!(
            Config,
            "grad-check needs positive trials, utterances, hidden size and embedding width"
        );
    }
    if cfg.steps.is_empty() || !cfg.steps.iter().all(|&h| h > 0.0) || !(cfg.tolerance > 0.0) {
        bail!(Config, "grad-check steps and tolerance must be positive");
    }
    let mut summary = GradCheckSummary {
        trials: cfg.trials,
        tolerance: cfg.tolerance,
        checks: Vec::new(),
        failures: Vec::new(),
    };
    for trial in 0..cfg.trials {
        let results = grad_check_trial(cfg, trial, seed)?;
        for r in &results {
            if !(r.max_error < cfg.tolerance) {
                summary.failures.push((trial, r.name));
            }
            match summary.checks.iter_mut().find(|c| c.name == r.name) {
                Some(c) => {
                    c.coordinates += r.coordinates;
                    if r.max_error > c.max_error {
                        c.max_error = r.max_error;
                        c.worst = r.worst.clone();
                        c.worst_pair = r.worst_pair;
                    }
                }
                None => summary.checks.push(r.clone()),
            }
        }
        on_trial(trial, &results);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_trials_pass() {
        let cfg = GradCheckConfig {
            trials: 3,
            ..GradCheckConfig::default()
        };
        let s = run_grad_check(&cfg, 0, &mut |_, _| {}).unwrap();
        assert!(s.passed(), "{:?}", s);
        let names: Vec<_> = s.checks.iter().map(|c| c.name).collect();
        for n in [
            "dense",
            "lstm",
            "bilstm",
            "conv1d_batchnorm",
            "batchnorm",
            "attention",
            "fused_model",
        ] {
            assert!(names.contains(&n), "{n}");
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let cfg = GradCheckConfig::default();
        assert_eq!(grad_check_trial(&cfg, 4, 9).unwrap(), grad_check_trial(&cfg, 4, 9).unwrap());
    }

    #[test]
    fn rejects_empty_configuration() {
        let cfg = GradCheckConfig {
            trials: 0,
            ..GradCheckConfig::default()
        };
        assert_eq!(run_grad_check(&cfg, 0, &mut |_, _| {}).unwrap_err().kind(), "config");
    }
}
