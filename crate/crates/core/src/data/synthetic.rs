use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{split_videos, CorpusManifest, Split, UtteranceRecord};
use crate::dsp::{wav_pcm16_bytes, Waveform};
use crate::error::{bail, Error, Result};
use crate::text::{EmbeddingTable, UNKNOWN_TOKEN};

/// Parameters of the constructed corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub utterances: usize,
    pub classes: usize,
    /// Share of utterances whose tone encodes the label.
    pub audio_fraction: f64,
    /// Share of utterances whose transcript contains a label word.
    pub text_fraction: f64,
    /// Standard deviation of the additive Gaussian noise (tone peak 0.4).
    pub noise: f64,
    pub seed: u64,
    pub utterances_per_video: usize,
    pub train_ratio: f64,
    pub sample_rate: u32,
    pub embedding_width: usize,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            utterances: 500,
            classes: 2,
            audio_fraction: 0.5,
            text_fraction: 0.5,
            noise: 0.05,
            seed: 7,
            utterances_per_video: 5,
            train_ratio: 0.8,
            sample_rate: 22050,
            embedding_width: 16,
            min_samples: 7000,
            max_samples: 9000,
        }
    }
}

/// Two cue words per class, the first `classes` rows are used.
const CLASS_WORDS: [[&str; 2]; 7] = [
    ["awful", "terrible"],
    ["great", "wonderful"],
    ["furious", "angry"],
    ["gloomy", "sad"],
    ["cheerful", "happy"],
    ["calm", "steady"],
    ["amazed", "surprised"],
];

const NEUTRAL_WORDS: [&str; 20] = [
    "the", "movie", "was", "and", "then", "it", "story", "we", "saw", "a", "scene", "about", "this", "actor", "in", "plot", "just", "of",
    "film", "there",
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("audio_fraction", self.audio_fraction), ("text_fraction", self.text_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                bail!(Config, "{name} {f} must lie in [0, 1]");
            }
        }
        if !(2..=CLASS_WORDS.len()).contains(&self.classes) {
            bail!(
                Config,
                "synthetic corpus supports 2..={} classes, got {}",
                CLASS_WORDS.len(),
                self.classes
            );
        }
        if self.utterances_per_video == 0 || self.utterances < 2 * self.utterances_per_video {
            bail!(Config, "need at least two videos of {} utterances", self.utterances_per_video);
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bail!(Config, "noise level {} must be finite and nonnegative", self.noise);
        }
        if self.embedding_width == 0 || self.sample_rate == 0 {
            bail!(Config, "embedding width and sample rate must be positive");
        }
        if self.min_samples < 1024 || self.max_samples < self.min_samples {
            bail!(
                Config,
                "utterance length range {}..{} is invalid",
                self.min_samples,
                self.max_samples
            );
        }
        Ok(())
    }

    /// Tone of class `k`: 220 Hz times successive fifths.
    pub fn class_frequency(k: usize) -> f64 {
        220.0 * 1.5f64.powi(k as i32)
    }
}

/// Generator-side facts about one utterance, for oracle checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: usize,
    pub audio_informative: bool,
    pub text_informative: bool,
    /// Class whose tone was synthesized.
    pub tone_class: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<UtteranceRecord>,
    pub waveforms: Vec<Waveform>,
    pub embeddings: EmbeddingTable,
    pub truth: Vec<TruthRecord>,
    pub classes: usize,
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.utterances;
    let n_audio = (spec.audio_fraction * n as f64).round() as usize;
    let n_text = (spec.text_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    // audio takes the front of the permutation, text the back, so the two
    // sets only overlap once the fractions sum past 1
    let mut audio_inf = vec![false; n];
    let mut text_inf = vec![false; n];
    for &i in &order[..n_audio] {
        audio_inf[i] = true;
    }
    for &i in &order[n - n_text..] {
        text_inf[i] = true;
    }

    let videos = n.div_ceil(spec.utterances_per_video);
    let video_ids: Vec<String> = (0..videos).map(|v| format!("vid{v:03}")).collect();
    let split = split_videos(&video_ids, spec.train_ratio, spec.seed)?;

    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut records = Vec::with_capacity(n);
    let mut waveforms = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let video = &video_ids[i / spec.utterances_per_video];
        let id = format!("{video}_u{}", i % spec.utterances_per_video);
        let label = rng.gen_range(0..spec.classes);
        let tone_class = if audio_inf[i] { label } else { rng.gen_range(0..spec.classes) };

        let len = rng.gen_range(spec.min_samples..=spec.max_samples);
        let f = SyntheticSpec::class_frequency(tone_class);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let sr = spec.sample_rate as f64;
        let samples = (0..len)
            .map(|t| {
                let x = 2.0 * PI * f * t as f64 / sr + phase;
                let tone = 0.4 * x.sin() + 0.1 * (2.0 * x).sin();
                let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (tone + eps).clamp(-1.0, 1.0)
            })
            .collect();
        waveforms.push(Waveform::new(samples, spec.sample_rate)?);

        let words = rng.gen_range(5..=9);
        let mut tokens: Vec<&str> = (0..words).map(|_| NEUTRAL_WORDS[rng.gen_range(0..NEUTRAL_WORDS.len())]).collect();
        if text_inf[i] {
            let w = CLASS_WORDS[label][rng.gen_range(0..2)];
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, w);
        }
        let split_side = if split.test.contains(video) { Split::Test } else { Split::Train };
        records.push(UtteranceRecord {
            id: id.clone(),
            video: video.clone(),
            speaker: format!("spk{:03}", i / spec.utterances_per_video),
            wav: Some(PathBuf::from(format!("wav/{id}.wav"))),
            text: tokens.join(" "),
            pos: None,
            label,
            score: None,
            split: split_side,
        });
        truth.push(TruthRecord {
            id,
            label,
            audio_informative: audio_inf[i],
            text_informative: text_inf[i],
            tone_class,
        });
    }

    let mut embeddings = EmbeddingTable::new(spec.embedding_width)?;
    let unit = Normal::new(0.0, 1.0 / (spec.embedding_width as f64).sqrt()).expect("valid std");
    embeddings.insert(UNKNOWN_TOKEN, vec![0.0; spec.embedding_width])?;
    let vocab = NEUTRAL_WORDS.iter().chain(CLASS_WORDS[..spec.classes].iter().flatten());
    for w in vocab {
        let v = (0..spec.embedding_width).map(|_| unit.sample(&mut rng)).collect();
        embeddings.insert(w, v)?;
    }

    Ok(SyntheticCorpus {
        records,
        waveforms,
        embeddings,
        truth,
        classes: spec.classes,
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRUTH_FILE: &str = "truth.jsonl";

impl SyntheticCorpus {
    /// Writes `manifest.jsonl`, `embeddings.bin`, `truth.jsonl` and
    /// `wav/<id>.wav` under `dir` and returns the loaded manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let dir = dir.as_ref();
        let wav_dir = dir.join("wav");
        fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
        for (r, w) in self.records.iter().zip(&self.waveforms) {
            let path = dir.join(r.wav.as_ref().expect("synthetic records carry audio"));
            fs::write(&path, wav_pcm16_bytes(w)).map_err(|e| Error::io(&path, e))?;
        }
        self.embeddings.save(dir.join(EMBEDDINGS_FILE))?;
        let mut truth = String::new();
        for t in &self.truth {
            truth.push_str(&serde_json::to_string(t).expect("truth serializes"));
            truth.push('\n');
        }
        let tpath = dir.join(TRUTH_FILE);
        fs::write(&tpath, truth).map_err(|e| Error::io(&tpath, e))?;
        let manifest = CorpusManifest::from_records(self.classes, dir, self.records.clone())?;
        manifest.save(dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}
