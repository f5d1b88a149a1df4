//! The full audio-text model: both branches, their stage-one classifier
//! heads, the fusion head and the frozen feature statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBranch, AudioBranchConfig, AudioInputs, AudioOutput};
use crate::data::{CorpusManifest, Split};
use crate::dsp::{concat_features, extract_features, load_wav, Standardizer};
use crate::error::{bail, Result};
use crate::fusion::{FusionConfig, FusionHead, FusionOutput};
use crate::nn::{Dense, DropoutSpec, ForwardCtx};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};
use crate::text::{embed_tokens, tag_tokens, EmbeddingTable, TextBranch, TextBranchConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub audio: AudioBranchConfig,
    pub text: TextBranchConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.text.validate()?;
        self.fusion.validate()
    }
}

/// Unstandardized audio features of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatures {
    /// Frame-wise concatenation of the LSTM feature kinds.
    pub lstm: Tensor,
    /// Log-mel spectrogram or raw frames.
    pub cnn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedUtterance {
    pub id: String,
    pub label: usize,
    pub audio: Option<AudioFeatures>,
    /// Embedded tokens (plus POS one-hots when configured).
    pub text: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    pub id: String,
    pub split: Split,
    pub members: Vec<usize>,
}

/// Every utterance of a manifest turned into model-ready tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCorpus {
    pub classes: usize,
    pub utterances: Vec<PreparedUtterance>,
    pub videos: Vec<PreparedVideo>,
}

impl PreparedCorpus {
    pub fn videos_in(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len()).filter(|&v| self.videos[v].split == split).collect()
    }

    pub fn utterances_of(&self, videos: &[usize]) -> Vec<usize> {
        videos.iter().flat_map(|&v| self.videos[v].members.iter().copied()).collect()
    }
}

/// Loads audio, extracts features and embeds transcripts. Utterances
/// without a waveform or with an empty transcript keep `None` for that
/// modality.
pub fn prepare_corpus(
    manifest: &CorpusManifest,
    table: &EmbeddingTable,
    audio: &AudioBranchConfig,
    text: &TextBranchConfig,
) -> Result<PreparedCorpus> {
    let mut kinds = audio.kinds.clone();
    let cnn_kind = audio.cnn_input.kind();
    if !kinds.contains(&cnn_kind) {
        kinds.push(cnn_kind);
    }
    let mut utterances = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let audio_features = match manifest.wav_path(r) {
            None => None,
            Some(path) => {
                let w = load_wav(&path)?;
                let seqs = extract_features(&kinds, &w).map_err(|e| match e {
                    crate::Error::Dimension(m) => crate::Error::Data(format!("utterance {}: {m}", r.id)),
                    other => other,
                })?;
                let lstm_parts: Vec<_> = audio
                    .kinds
                    .iter()
                    .map(|k| seqs.iter().find(|s| s.kind == *k).expect("extracted").clone())
                    .collect();
                let cnn = seqs.iter().find(|s| s.kind == cnn_kind).expect("extracted").data.clone();
                Some(AudioFeatures {
                    lstm: concat_features(&lstm_parts)?,
                    cnn,
                })
            }
        };
        let tokens = r.tokens();
        let text_features = if tokens.is_empty() {
            None
        } else {
            let pos = match (&r.pos, text.use_pos) {
                (_, false) => None,
                (Some(p), true) => Some(p.clone()),
                (None, true) => Some(tag_tokens(&tokens)),
            };
            Some(embed_tokens(table, &tokens, pos.as_deref())?)
        };
        utterances.push(PreparedUtterance {
            id: r.id.clone(),
            label: r.label,
            audio: audio_features,
            text: text_features,
        });
    }
    let videos = manifest
        .videos
        .iter()
        .map(|v| PreparedVideo {
            id: v.id.clone(),
            split: v.split,
            members: v.utterances.clone(),
        })
        .collect();
    Ok(PreparedCorpus {
        classes: manifest.classes,
        utterances,
        videos,
    })
}

/// Layer handles into a [`ParamStore`]. The store is kept separately so
/// training can borrow the layers while it updates the parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding_width: usize,
    pub audio: AudioBranch,
    pub text: TextBranch,
    pub audio_head: Dense,
    pub text_head: Dense,
    pub fusion: FusionHead,
    pub lstm_norm: (ParamId, ParamId),
    pub cnn_norm: (ParamId, ParamId),
}

pub const AUDIO_PREFIX: &str = "audio.";
pub const TEXT_PREFIX: &str = "text.";
pub const AUDIO_HEAD_PREFIX: &str = "audio_head.";
pub const TEXT_HEAD_PREFIX: &str = "text_head.";
pub const FUSION_PREFIX: &str = "fusion.";

impl Model {
    /// Builds every layer with weights drawn from `seed`. `branch_dropout`
    /// applies inside both branches; the fusion head uses its own rate.
    pub fn new(config: ModelConfig, embedding_width: usize, branch_dropout: f64, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dropout = DropoutSpec::new(branch_dropout)?;
        let k = config.fusion.classes;
        let audio = AudioBranch::new(&mut store, "audio", config.audio.clone(), dropout, &mut rng)?;
        let text = TextBranch::new(&mut store, "text", config.text.clone(), embedding_width, dropout, &mut rng)?;
        let audio_head = Dense::new(&mut store, "audio_head", audio.asv_width(), k, false, &mut rng);
        let text_head = Dense::new(&mut store, "text_head", text.tsv_width(), k, false, &mut rng);
        let fusion = FusionHead::new(
            &mut store,
            "fusion",
            config.fusion.clone(),
            audio.asv_width(),
            text.tsv_width(),
            &mut rng,
        )?;
        let lstm_norm = Standardizer::identity(config.audio.lstm_input_width()).register(&mut store, "norm.lstm");
        let cnn_norm = Standardizer::identity(config.audio.cnn_input_width()).register(&mut store, "norm.cnn");
        let model = Model {
            config,
            embedding_width,
            audio,
            text,
            audio_head,
            text_head,
            fusion,
            lstm_norm,
            cnn_norm,
        };
        Ok((model, store))
    }

    pub fn classes(&self) -> usize {
        self.config.fusion.classes
    }

    /// Trainable ids under any of the prefixes.
    pub fn params_under(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = prefixes.iter().flat_map(|p| store.ids_with_prefix(p)).collect();
        ids.sort();
        ids
    }

    /// Fits both standardizers on the given utterances' frames. The raw
    /// frame input keeps the identity (its scaling is its normalization).
    pub fn fit_standardizers(&self, store: &mut ParamStore, corpus: &PreparedCorpus, utterances: &[usize]) -> Result<()> {
        let audio: Vec<&AudioFeatures> = utterances.iter().filter_map(|&u| corpus.utterances[u].audio.as_ref()).collect();
        if audio.is_empty() {
            return Ok(());
        }
        Standardizer::fit(audio.iter().map(|a| &a.lstm))?.write_to(store, self.lstm_norm)?;
        if self.config.audio.cnn_input == crate::audio::CnnInput::LogMel {
            Standardizer::fit(audio.iter().map(|a| &a.cnn))?.write_to(store, self.cnn_norm)?;
        }
        Ok(())
    }

    pub fn audio_inputs(&self, store: &ParamStore, f: &AudioFeatures) -> Result<AudioInputs> {
        Ok(AudioInputs {
            features: Standardizer::from_store(store, self.lstm_norm).apply(&f.lstm)?,
            spectrogram: Standardizer::from_store(store, self.cnn_norm).apply(&f.cnn)?,
        })
    }

    /// Stage-one audio prediction: ASV then the audio head, `1 × K`.
    pub fn audio_logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &AudioInputs,
        ctx: &mut ForwardCtx,
    ) -> Result<(AudioOutput, Var)> {
        let out = self.audio.forward(tape, store, inputs, ctx)?;
        let logits = self.audio_head.forward(tape, store, out.asv)?;
        Ok((out, logits))
    }

    pub fn text_logits(&self, tape: &mut Tape, store: &ParamStore, embedded: &Tensor, ctx: &mut ForwardCtx) -> Result<(Var, Var)> {
        let out = self.text.forward(tape, store, embedded, ctx)?;
        let logits = self.text_head.forward(tape, store, out.tsv)?;
        Ok((out.tsv, logits))
    }

    /// Branch forwards for every utterance of a video, stacked into `n × A`
    /// and `n × T`.
    pub fn video_vectors(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        corpus: &PreparedCorpus,
        inputs: &[Option<AudioInputs>],
        video: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, Var)> {
        let mut asv = Vec::new();
        let mut tsv = Vec::new();
        for &u in &corpus.videos[video].members {
            let utt = &corpus.utterances[u];
            let (Some(a), Some(t)) = (&inputs[u], &utt.text) else {
                bail!(Data, "utterance {} lacks a modality; fusion needs both audio and text", utt.id);
            };
            asv.push(self.audio.forward(tape, store, a, ctx)?.asv);
            tsv.push(self.text.forward(tape, store, t, ctx)?.tsv);
        }
        Ok((tape.concat(&asv, Axis::Rows)?, tape.concat(&tsv, Axis::Rows)?))
    }

    /// Full forward of one video through both branches and the fusion head.
    pub fn predict_video(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        corpus: &PreparedCorpus,
        inputs: &[Option<AudioInputs>],
        video: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<FusionOutput> {
        let (asv, tsv) = self.video_vectors(tape, store, corpus, inputs, video, ctx)?;
        self.fusion.forward(tape, store, asv, tsv, ctx)
    }

    /// Standardized audio inputs for every utterance that has audio.
    pub fn all_audio_inputs(&self, store: &ParamStore, corpus: &PreparedCorpus) -> Result<Vec<Option<AudioInputs>>> {
        corpus
            .utterances
            .iter()
            .map(|u| u.audio.as_ref().map(|a| self.audio_inputs(store, a)).transpose())
            .collect()
    }

    /// Parameters with an identically zero gradient by construction.
    pub fn shift_invariant_params(&self) -> Vec<ParamId> {
        let mut ids = self.audio.shift_invariant_params();
        ids.extend(self.text.shift_invariant_params());
        ids
    }
}
