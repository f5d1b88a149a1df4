use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, PosTag};
use crate::error::{bail, Result};
use crate::nn::{dropout_apply, Attended, Attention, BiLstm, Conv1d, Conv1dConfig, Dense, DropoutSpec, ForwardCtx, Padding};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Which vector feeds the final projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsvSource {
    /// Convolution over the attention-weighted sequence, max-pooled over time.
    ConvPool,
    /// Sum of the attention-weighted hidden states.
    AttentionSum,
    /// Hidden state at the last time step.
    LastStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextBranchConfig {
    pub use_pos: bool,
    pub lstm_hidden: usize,
    /// Keys missing from a partial `[text.conv]` table fall back to the
    /// text defaults (no batch norm), not the generic convolution ones.
    #[serde(deserialize_with = "text_conv")]
    pub conv: Conv1dConfig,
    pub tsv_width: usize,
    pub source: TsvSource,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvOverrides {
    kernel_sizes: Option<Vec<usize>>,
    channels: Option<usize>,
    stride: Option<usize>,
    padding: Option<Padding>,
    batch_norm: Option<bool>,
    relu: Option<bool>,
}

fn text_conv<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Conv1dConfig, D::Error> {
    let o = ConvOverrides::deserialize(d)?;
    let base = TextBranchConfig::default().conv;
    Ok(Conv1dConfig {
        kernel_sizes: o.kernel_sizes.unwrap_or(base.kernel_sizes),
        channels: o.channels.unwrap_or(base.channels),
        stride: o.stride.unwrap_or(base.stride),
        padding: o.padding.unwrap_or(base.padding),
        batch_norm: o.batch_norm.unwrap_or(base.batch_norm),
        relu: o.relu.unwrap_or(base.relu),
    })
}

impl Default for TextBranchConfig {
    fn default() -> Self {
        TextBranchConfig {
            use_pos: true,
            lstm_hidden: 200,
            conv: Conv1dConfig {
                batch_norm: false,
                ..Conv1dConfig::default()
            },
            tsv_width: 100,
            source: TsvSource::ConvPool,
        }
    }
}

impl TextBranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 || self.tsv_width == 0 {
            bail!(Config, "text hidden size and TSV width must be positive");
        }
        self.conv.validate()
    }

    pub fn input_width(&self, embedding_width: usize) -> usize {
        embedding_width + if self.use_pos { PosTag::COUNT } else { 0 }
    }
}

/// One row per token: its embedding, optionally followed by a one-hot
/// part-of-speech block.
pub fn embed_tokens(table: &EmbeddingTable, tokens: &[String], pos: Option<&[PosTag]>) -> Result<Tensor> {
    if tokens.is_empty() {
        bail!(Contract, "cannot embed an empty token list");
    }
    if let Some(p) = pos {
        if p.len() != tokens.len() {
            bail!(Dimension, "{} POS tags for {} tokens", p.len(), tokens.len());
        }
    }
    let width = table.width() + if pos.is_some() { PosTag::COUNT } else { 0 };
    let mut data = Vec::with_capacity(tokens.len() * width);
    for (i, tok) in tokens.iter().enumerate() {
        data.extend_from_slice(table.lookup(tok));
        if let Some(p) = pos {
            let mut onehot = [0.0; PosTag::COUNT];
            onehot[p[i].index()] = 1.0;
            data.extend_from_slice(&onehot);
        }
    }
    Tensor::matrix(tokens.len(), width, data)
}

#[derive(Clone, Copy, Debug)]
pub struct TextOutput {
    pub tsv: Var,
    /// `T × 1` attention weights over tokens.
    pub weights: Var,
    /// `1 × 2H` sum of the attention-weighted states.
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct TextBranch {
    pub config: TextBranchConfig,
    pub input_width: usize,
    pub lstm: BiLstm,
    pub attention: Attention,
    pub conv: Conv1d,
    pub output: Dense,
    pub dropout: DropoutSpec,
}

impl TextBranch {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: TextBranchConfig,
        embedding_width: usize,
        dropout: DropoutSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let input_width = config.input_width(embedding_width);
        let lstm = BiLstm::new(store, &format!("{name}.lstm"), input_width, config.lstm_hidden, rng);
        let width = lstm.output_width();
        let attention = Attention::new(store, &format!("{name}.attention"), width, rng);
        let conv = Conv1d::new(store, &format!("{name}.conv"), width, config.conv.clone(), rng)?;
        let pooled_width = match config.source {
            TsvSource::ConvPool => config.conv.out_channels(),
            TsvSource::AttentionSum | TsvSource::LastStep => width,
        };
        let output = Dense::new(store, &format!("{name}.output"), pooled_width, config.tsv_width, true, rng);
        Ok(TextBranch {
            config,
            input_width,
            lstm,
            attention,
            conv,
            output,
            dropout,
        })
    }

    pub fn tsv_width(&self) -> usize {
        self.config.tsv_width
    }

    /// Scored temporal attention over the Bi-LSTM states.
    pub fn attend_text(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Attended> {
        self.attention.attend(tape, store, hidden)
    }

    /// Multi-kernel convolution over `r`, max-pooled over time, `1 × channels`.
    pub fn conv_text_features(&self, tape: &mut Tape, store: &ParamStore, r: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        conv_text_features(&self.conv, tape, store, r, ctx)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, embedded: &Tensor, ctx: &mut ForwardCtx) -> Result<TextOutput> {
        if embedded.cols() != self.input_width {
            bail!(
                Dimension,
                "text input {:?} does not match the configured width {}",
                embedded.shape(),
                self.input_width
            );
        }
        let x = tape.leaf(embedded.clone())?;
        let hidden = self.lstm.encode(tape, store, x)?;
        let att = self.attend_text(tape, store, hidden)?;
        let pooled = match self.config.source {
            TsvSource::ConvPool => self.conv_text_features(tape, store, att.weighted, ctx)?,
            TsvSource::AttentionSum => att.pooled,
            TsvSource::LastStep => {
                let last = tape.value(hidden).rows() - 1;
                tape.row(hidden, last)?
            }
        };
        let pooled = dropout_apply(&self.dropout, tape, pooled, ctx)?;
        let tsv = self.output.forward(tape, store, pooled)?;
        Ok(TextOutput {
            tsv,
            weights: att.weights,
            pooled: att.pooled,
        })
    }

    /// See [`crate::audio::AudioBranch::shift_invariant_params`].
    pub fn shift_invariant_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.attention.bias];
        if self.config.conv.batch_norm {
            ids.extend(self.config.conv.kernel_sizes.iter().filter_map(|&k| self.conv.bias(k)));
        }
        ids
    }

    /// Parameters that receive no gradient under the configured TSV source.
    pub fn unused_params(&self, store: &ParamStore) -> Vec<ParamId> {
        match self.config.source {
            TsvSource::ConvPool => Vec::new(),
            _ => {
                let prefix = store.name(self.attention.weight).trim_end_matches("attention.weight").to_string();
                store.ids_with_prefix(&format!("{prefix}conv."))
            }
        }
    }
}

pub fn conv_text_features(conv: &Conv1d, tape: &mut Tape, store: &ParamStore, r: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    let maps = conv.forward(tape, store, r, ctx)?;
    tape.max_rows(maps)
}
