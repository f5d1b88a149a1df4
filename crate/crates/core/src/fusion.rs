//! Multimodal attention over contextual utterance encodings and the final
//! classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{dropout_apply, init_uniform, BiLstm, Dense, DropoutSpec, ForwardCtx};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Hidden size of each direction of the utterance-level Bi-LSTMs.
    pub context_hidden: usize,
    /// Width both modalities are projected to before attention.
    pub shared_width: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            context_hidden: 200,
            shared_width: 100,
            classes: 2,
            dropout: 0.4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_hidden == 0 || self.shared_width == 0 {
            bail!(Config, "fusion widths must be positive");
        }
        if self.classes < 2 {
            bail!(Config, "need at least 2 classes, got {}", self.classes);
        }
        DropoutSpec::new(self.dropout).map(|_| ())
    }
}

/// Softmax of `e·h_t` over the rows of `hidden`, and the weighted sum of
/// those rows. `e` may hold several query rows; each is normalized on its own.
/// Returns `(weights q×T, fused q×W)`.
pub fn modality_attention(tape: &mut Tape, e: Var, hidden: Var) -> Result<(Var, Var)> {
    if tape.value(e).cols() != tape.value(hidden).cols() {
        bail!(
            Dimension,
            "attention query {:?} and hidden states {:?} differ in width",
            tape.shape(e),
            tape.shape(hidden)
        );
    }
    let ht = tape.transpose(hidden)?;
    let scores = tape.matmul(e, ht)?;
    let weights = tape.softmax(scores, Axis::Cols)?;
    let fused = tape.matmul(weights, hidden)?;
    Ok((weights, fused))
}

/// Classifier weight `M` (input width × classes) and bias `b`.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_width: usize,
    pub classes: usize,
}

impl FusionParams {
    pub fn new(store: &mut ParamStore, name: &str, input_width: usize, classes: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            weight: store.add(&format!("{name}.weight"), init_uniform(&[input_width, classes], input_width, rng)),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[classes])),
            input_width,
            classes,
        }
    }

    /// `concat(Z_a, Z_t, ASV, TSV)·M + b`, one row of logits per utterance.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, parts: &[Var]) -> Result<Var> {
        let x = tape.concat(parts, Axis::Cols)?;
        if tape.value(x).cols() != self.input_width {
            bail!(Dimension, "classifier expects width {}, got {:?}", self.input_width, tape.shape(x));
        }
        let m = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, m)?;
        tape.add_row(y, b)
    }
}

/// Per-utterance prediction read back from the tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
    pub z_audio: Vec<f64>,
    pub z_text: Vec<f64>,
    /// Weights over the utterances of the video, audio side.
    pub audio_weights: Vec<f64>,
    pub text_weights: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Logits, softmax probabilities and prediction for one set of inputs.
pub fn classify_fused(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    asv: Var,
    tsv: Var,
    z_audio: Var,
    z_text: Var,
) -> Result<(Var, Var)> {
    let logits = params.logits(tape, store, &[z_audio, z_text, asv, tsv])?;
    let probs = tape.softmax(logits, Axis::Cols)?;
    Ok((logits, probs))
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    /// `n × K`.
    pub logits: Var,
    pub probabilities: Var,
    /// `n × n`, row `i` attends over the video's utterances for utterance `i`.
    pub audio_weights: Var,
    pub text_weights: Var,
    pub z_audio: Var,
    pub z_text: Var,
}

impl FusionOutput {
    pub fn read(&self, tape: &Tape) -> Vec<FusedPrediction> {
        let probs = tape.value(self.probabilities);
        (0..probs.rows())
            .map(|i| {
                let p = probs.row_slice(i).to_vec();
                FusedPrediction {
                    label: argmax(&p),
                    probabilities: p,
                    z_audio: tape.value(self.z_audio).row_slice(i).to_vec(),
                    z_text: tape.value(self.z_text).row_slice(i).to_vec(),
                    audio_weights: tape.value(self.audio_weights).row_slice(i).to_vec(),
                    text_weights: tape.value(self.text_weights).row_slice(i).to_vec(),
                }
            })
            .collect()
    }
}

/// Utterance-level context encoders, projections to a shared width, the
/// query built from each ASV, and the classifier.
#[derive(Clone, Debug)]
pub struct FusionHead {
    pub config: FusionConfig,
    pub asv_width: usize,
    pub tsv_width: usize,
    pub audio_context: BiLstm,
    pub text_context: BiLstm,
    pub audio_proj: Dense,
    pub text_proj: Dense,
    pub query: Dense,
    pub classifier: FusionParams,
    pub dropout: DropoutSpec,
}

impl FusionHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: FusionConfig,
        asv_width: usize,
        tsv_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (h, d) = (config.context_hidden, config.shared_width);
        let audio_context = BiLstm::new(store, &format!("{name}.audio_context"), asv_width, h, rng);
        let text_context = BiLstm::new(store, &format!("{name}.text_context"), tsv_width, h, rng);
        let audio_proj = Dense::new(store, &format!("{name}.audio_proj"), 2 * h, d, true, rng);
        let text_proj = Dense::new(store, &format!("{name}.text_proj"), 2 * h, d, true, rng);
        let query = Dense::new(store, &format!("{name}.query"), asv_width, d, true, rng);
        let classifier = FusionParams::new(
            store,
            &format!("{name}.classifier"),
            2 * d + asv_width + tsv_width,
            config.classes,
            rng,
        );
        let dropout = DropoutSpec::new(config.dropout)?;
        Ok(FusionHead {
            config,
            asv_width,
            tsv_width,
            audio_context,
            text_context,
            audio_proj,
            text_proj,
            query,
            classifier,
            dropout,
        })
    }

    /// Runs over one video: `asv` is `n × A`, `tsv` is `n × T`, rows in
    /// utterance order.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, asv: Var, tsv: Var, ctx: &mut ForwardCtx) -> Result<FusionOutput> {
        let (a, t) = (tape.value(asv), tape.value(tsv));
        if a.rows() != t.rows() || a.cols() != self.asv_width || t.cols() != self.tsv_width {
            bail!(
                Dimension,
                "fusion expects n×{} audio and n×{} text, got {:?} and {:?}",
                self.asv_width,
                self.tsv_width,
                a.shape(),
                t.shape()
            );
        }
        let ha = self.audio_context.encode(tape, store, asv)?;
        let ht = self.text_context.encode(tape, store, tsv)?;
        let ha = dropout_apply(&self.dropout, tape, ha, ctx)?;
        let ht = dropout_apply(&self.dropout, tape, ht, ctx)?;
        let pa = self.audio_proj.forward(tape, store, ha)?;
        let pt = self.text_proj.forward(tape, store, ht)?;
        let e = self.query.forward(tape, store, asv)?;
        let (audio_weights, z_audio) = modality_attention(tape, e, pa)?;
        let (text_weights, z_text) = modality_attention(tape, e, pt)?;
        let (logits, probabilities) = classify_fused(tape, store, &self.classifier, asv, tsv, z_audio, z_text)?;
        Ok(FusionOutput {
            logits,
            probabilities,
            audio_weights,
            text_weights,
            z_audio,
            z_text,
        })
    }
}
