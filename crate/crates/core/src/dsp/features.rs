use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::mel::{mel_energies, mel_filterbank, LOG_FLOOR};
use super::stft::{stft, Spectrogram, DEFAULT_HOP, DEFAULT_WINDOW};
use super::Waveform;
use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const MFCC_COEFFICIENTS: usize = 13;
pub const MEL_BANDS: usize = 64;
pub const CONTRAST_BANDS: usize = 6;
pub const CONTRAST_FMIN: f64 = 200.0;
pub const CONTRAST_QUANTILE: f64 = 0.02;
pub const CENS_SMOOTHING: usize = 41;
const CENS_STEPS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureKind {
    LogMel,
    Mfcc,
    ChromaStft,
    ChromaCens,
    SpectralCentroid,
    SpectralContrast,
    Rmse,
    Tonnetz,
    /// Non-overlapping 1024-sample frames of the scaled waveform.
    RawFrames,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 9] = [
        FeatureKind::LogMel,
        FeatureKind::Mfcc,
        FeatureKind::ChromaStft,
        FeatureKind::ChromaCens,
        FeatureKind::SpectralCentroid,
        FeatureKind::SpectralContrast,
        FeatureKind::Rmse,
        FeatureKind::Tonnetz,
        FeatureKind::RawFrames,
    ];

    /// The four acoustic families fed to the LSTM branch by default.
    pub const DEFAULT_LSTM: [FeatureKind; 4] = [
        FeatureKind::Mfcc,
        FeatureKind::SpectralCentroid,
        FeatureKind::ChromaStft,
        FeatureKind::SpectralContrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LogMel => "logmel",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::ChromaStft => "chroma_stft",
            FeatureKind::ChromaCens => "chroma_cens",
            FeatureKind::SpectralCentroid => "spectral_centroid",
            FeatureKind::SpectralContrast => "spectral_contrast",
            FeatureKind::Rmse => "rmse",
            FeatureKind::Tonnetz => "tonnetz",
            FeatureKind::RawFrames => "raw",
        }
    }

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).expect("listed") as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        (tag as usize).checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn dims(self) -> usize {
        match self {
            FeatureKind::LogMel => MEL_BANDS,
            FeatureKind::Mfcc => MFCC_COEFFICIENTS,
            FeatureKind::ChromaStft | FeatureKind::ChromaCens => 12,
            FeatureKind::SpectralCentroid | FeatureKind::Rmse => 1,
            FeatureKind::SpectralContrast => CONTRAST_BANDS + 1,
            FeatureKind::Tonnetz => 6,
            FeatureKind::RawFrames => DEFAULT_WINDOW,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "mfccs" => "mfcc",
            "chroma" => "chroma_stft",
            "centroid" => "spectral_centroid",
            "contrast" => "spectral_contrast",
            "rms" => "rmse",
            "log_mel" | "mel" => "logmel",
            other => other,
        };
        Self::ALL.into_iter().find(|k| k.name() == alias).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown feature kind '{s}' (known: {})", known.join(", ")))
        })
    }
}

impl TryFrom<String> for FeatureKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureKind> for String {
    fn from(k: FeatureKind) -> String {
        k.name().to_string()
    }
}

pub fn parse_kinds(list: &str) -> Result<Vec<FeatureKind>> {
    let kinds = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        bail!(Config, "no feature kinds given");
    }
    Ok(kinds)
}

/// A `frames × dims` feature matrix tagged with its kind.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub frame_rate: f64,
    pub data: Tensor,
}

impl FeatureSequence {
    pub fn new(kind: FeatureKind, frame_rate: f64, data: Tensor) -> Result<Self> {
        if data.ndim() != 2 {
            bail!(Dimension, "feature data must be a matrix, got {:?}", data.shape());
        }
        if !data.is_finite() {
            bail!(Numeric, "{kind} features contain NaN or Inf");
        }
        if !(frame_rate > 0.0) {
            bail!(Contract, "frame rate must be positive");
        }
        Ok(FeatureSequence { kind, frame_rate, data })
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dims(&self) -> usize {
        self.data.cols()
    }
}

/// Frame-aligned column concatenation. Sequences of different lengths are
/// truncated to the shortest.
pub fn concat_features(parts: &[FeatureSequence]) -> Result<Tensor> {
    let Some(frames) = parts.iter().map(FeatureSequence::frames).min() else {
        bail!(Contract, "no feature sequences to concatenate");
    };
    let width: usize = parts.iter().map(FeatureSequence::dims).sum();
    let mut data = Vec::with_capacity(frames * width);
    for f in 0..frames {
        for p in parts {
            data.extend_from_slice(p.data.row_slice(f));
        }
    }
    Tensor::matrix(frames, width, data)
}

/// Extracts several kinds from one waveform, sharing a single STFT.
pub fn extract_features(kinds: &[FeatureKind], w: &Waveform) -> Result<Vec<FeatureSequence>> {
    let mut spec: Option<Spectrogram> = None;
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        if kind == FeatureKind::RawFrames {
            out.push(raw_frames(w)?);
            continue;
        }
        if spec.is_none() {
            spec = Some(stft(w, DEFAULT_WINDOW, DEFAULT_HOP)?);
        }
        let s = spec.as_ref().expect("just computed");
        out.push(from_spectrogram(kind, s, w)?);
    }
    Ok(out)
}

pub fn extract_feature(kind: FeatureKind, w: &Waveform) -> Result<FeatureSequence> {
    Ok(extract_features(&[kind], w)?.remove(0))
}

fn from_spectrogram(kind: FeatureKind, s: &Spectrogram, w: &Waveform) -> Result<FeatureSequence> {
    let data = match kind {
        FeatureKind::LogMel => log_mel(s, MEL_BANDS)?,
        FeatureKind::Mfcc => mfcc(s, MEL_BANDS, MFCC_COEFFICIENTS)?,
        FeatureKind::ChromaStft => chroma_stft(s),
        FeatureKind::ChromaCens => chroma_cens(&chroma_stft(s)),
        FeatureKind::SpectralCentroid => spectral_centroid(s),
        FeatureKind::SpectralContrast => spectral_contrast(s),
        FeatureKind::Rmse => rmse(w, s.window, s.hop)?,
        FeatureKind::Tonnetz => tonnetz(&chroma_stft(s)),
        FeatureKind::RawFrames => unreachable!("handled without a spectrogram"),
    };
    FeatureSequence::new(kind, s.frame_rate(), data)
}

fn log_mel(s: &Spectrogram, n_mels: usize) -> Result<Tensor> {
    let fb = mel_filterbank(s.sample_rate, s.window, n_mels)?;
    Ok(mel_energies(s, &fb).map(|v| (v + LOG_FLOOR).ln()))
}

/// Orthonormal DCT-II along each row, keeping the first `n` coefficients.
pub fn dct_ii(x: &Tensor, n: usize) -> Tensor {
    let (rows, m) = (x.rows(), x.cols());
    let n = n.min(m);
    let basis: Vec<f64> = (0..n)
        .flat_map(|k| {
            let norm = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            (0..m).map(move |j| norm * (PI * k as f64 * (2 * j + 1) as f64 / (2 * m) as f64).cos())
        })
        .collect();
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let row = x.row_slice(r);
        for k in 0..n {
            out.push(basis[k * m..(k + 1) * m].iter().zip(row).map(|(b, v)| b * v).sum());
        }
    }
    Tensor::matrix(rows, n, out).expect("nonempty")
}

pub fn mfcc(s: &Spectrogram, n_mels: usize, n_coeffs: usize) -> Result<Tensor> {
    if n_coeffs == 0 || n_coeffs > n_mels {
        bail!(Config, "{n_coeffs} cepstral coefficients requested from {n_mels} mel bands");
    }
    Ok(dct_ii(&log_mel(s, n_mels)?, n_coeffs))
}

/// Pitch class (0 = C … 9 = A … 11 = B) of a frequency, by nearest semitone.
pub fn pitch_class(hz: f64) -> usize {
    let midi = 69.0 + 12.0 * (hz / 440.0).log2();
    (midi.round() as i64).rem_euclid(12) as usize
}

/// Power of every non-DC bin summed into its nearest pitch class.
pub fn chroma_stft(s: &Spectrogram) -> Tensor {
    let classes: Vec<usize> = (1..s.bins()).map(|k| pitch_class(s.bin_hz(k))).collect();
    let mut out = vec![0.0; s.frames() * 12];
    for f in 0..s.frames() {
        let row = s.magnitudes.row_slice(f);
        for (k, &pc) in classes.iter().enumerate() {
            out[f * 12 + pc] += row[k + 1] * row[k + 1];
        }
    }
    Tensor::matrix(s.frames(), 12, out).expect("nonempty")
}

fn normalize_rows(x: &mut Tensor, norm: impl Fn(&[f64]) -> f64) {
    let cols = x.cols();
    for row in x.data_mut().chunks_mut(cols) {
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn l1(row: &[f64]) -> f64 {
    row.iter().map(|v| v.abs()).sum()
}

fn l2(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Symmetric Hann window of `n` nonzero taps, normalized to unit sum.
fn smoothing_window(n: usize) -> Vec<f64> {
    let full = n + 2;
    let w: Vec<f64> = (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (full - 1) as f64).cos())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Energy-normalized statistics: ℓ1 chroma, stepwise quantization,
/// temporal Hann smoothing, then ℓ2 normalization per frame.
pub fn chroma_cens(chroma: &Tensor) -> Tensor {
    let mut q = chroma.clone();
    normalize_rows(&mut q, l1);
    let q = q.map(|v| CENS_STEPS.iter().filter(|&&t| v > t).count() as f64 * 0.25);
    let frames = q.rows();
    let win = smoothing_window(CENS_SMOOTHING);
    let half = CENS_SMOOTHING / 2;
    let mut out = vec![0.0; frames * 12];
    for f in 0..frames {
        for (j, &wv) in win.iter().enumerate() {
            let Some(src) = (f + j).checked_sub(half).filter(|&s| s < frames) else {
                continue;
            };
            for c in 0..12 {
                out[f * 12 + c] += wv * q.at(src, c);
            }
        }
    }
    let mut out = Tensor::matrix(frames, 12, out).expect("nonempty");
    normalize_rows(&mut out, l2);
    out
}

/// Magnitude-weighted mean frequency of each frame; 0 for silent frames.
pub fn spectral_centroid(s: &Spectrogram) -> Tensor {
    let hz: Vec<f64> = (0..s.bins()).map(|k| s.bin_hz(k)).collect();
    let data = (0..s.frames())
        .map(|f| {
            let row = s.magnitudes.row_slice(f);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().zip(&hz).map(|(m, h)| m * h).sum::<f64>() / total
            } else {
                0.0
            }
        })
        .collect();
    Tensor::matrix(s.frames(), 1, data).expect("nonempty")
}

/// Band edges in Hz: `0, fmin, 2·fmin, …` with the top band reaching Nyquist.
pub fn contrast_band_edges(sample_rate: u32) -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend((0..CONTRAST_BANDS).map(|i| CONTRAST_FMIN * 2f64.powi(i as i32)));
    edges.push(sample_rate as f64 / 2.0);
    edges
}

/// Per octave band: mean of the top quantile of magnitudes minus mean of
/// the bottom quantile, in decibels.
pub fn spectral_contrast(s: &Spectrogram) -> Tensor {
    let edges = contrast_band_edges(s.sample_rate);
    let bands: Vec<Vec<usize>> = (0..=CONTRAST_BANDS)
        .map(|b| {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let last = b == CONTRAST_BANDS;
            (0..s.bins())
                .filter(|&k| {
                    let f = s.bin_hz(k);
                    f >= lo && (f < hi || (last && f <= hi))
                })
                .collect()
        })
        .collect();
    let db = |v: f64| 10.0 * v.max(LOG_FLOOR).log10();
    let mut out = Vec::with_capacity(s.frames() * bands.len());
    let mut sorted = Vec::new();
    for f in 0..s.frames() {
        let row = s.magnitudes.row_slice(f);
        for band in &bands {
            if band.is_empty() {
                out.push(0.0);
                continue;
            }
            sorted.clear();
            sorted.extend(band.iter().map(|&k| row[k]));
            sorted.sort_by(f64::total_cmp);
            let n = ((CONTRAST_QUANTILE * sorted.len() as f64).round() as usize).max(1);
            let valley = sorted[..n].iter().sum::<f64>() / n as f64;
            let peak = sorted[sorted.len() - n..].iter().sum::<f64>() / n as f64;
            out.push(db(peak) - db(valley));
        }
    }
    Tensor::matrix(s.frames(), bands.len(), out).expect("nonempty")
}

/// Root-mean-square of each raw analysis frame.
pub fn rmse(w: &Waveform, window: usize, hop: usize) -> Result<Tensor> {
    let Some(frames) = super::stft::frame_count(w.len(), window, hop) else {
        bail!(Dimension, "signal of {} samples is shorter than one frame", w.len());
    };
    let data = (0..frames)
        .map(|f| {
            let seg = &w.samples[f * hop..f * hop + window];
            (seg.iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt()
        })
        .collect();
    Tensor::matrix(frames, 1, data)
}

/// Tonal centroid basis: fifths, minor thirds and major thirds as
/// sin/cos pairs over the 12 pitch classes.
pub fn tonnetz_basis() -> Tensor {
    let rows = [(7.0 / 6.0, 1.0), (3.0 / 2.0, 1.0), (2.0 / 3.0, 0.5)];
    let mut data = Vec::with_capacity(72);
    for (interval, radius) in rows {
        for trig in [f64::sin, f64::cos] {
            data.extend((0..12).map(|l| radius * trig(interval * PI * l as f64)));
        }
    }
    Tensor::matrix(6, 12, data).expect("6×12")
}

pub fn tonnetz(chroma: &Tensor) -> Tensor {
    let mut c = chroma.clone();
    normalize_rows(&mut c, l1);
    let phi = tonnetz_basis();
    let frames = c.rows();
    let mut out = Vec::with_capacity(frames * 6);
    for f in 0..frames {
        let row = c.row_slice(f);
        for d in 0..6 {
            out.push(phi.row_slice(d).iter().zip(row).map(|(p, v)| p * v).sum());
        }
    }
    Tensor::matrix(frames, 6, out).expect("nonempty")
}

/// Non-overlapping window-sized frames of the waveform after scaling to
/// `[-256, 256]`. A trailing partial frame is dropped.
pub fn raw_frames(w: &Waveform) -> Result<FeatureSequence> {
    let scaled = super::scale_waveform(w)?;
    let frames = scaled.len() / DEFAULT_WINDOW;
    if frames == 0 {
        bail!(Dimension, "signal of {} samples is shorter than one frame", w.len());
    }
    let data = Tensor::matrix(frames, DEFAULT_WINDOW, scaled.samples[..frames * DEFAULT_WINDOW].to_vec())?;
    FeatureSequence::new(FeatureKind::RawFrames, w.sample_rate as f64 / DEFAULT_WINDOW as f64, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(hz: f64, amp: f64, len: usize, sr: u32) -> Waveform {
        let samples = (0..len).map(|i| amp * (2.0 * PI * hz * i as f64 / sr as f64).sin()).collect();
        Waveform::new(samples, sr).unwrap()
    }

    fn noise(seed: u64, len: usize) -> Waveform {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 22050).unwrap()
    }

    #[test]
    fn dims_match_kind_table() {
        let w = noise(1, 8192);
        for kind in FeatureKind::ALL {
            let f = extract_feature(kind, &w).unwrap();
            assert_eq!(f.dims(), kind.dims(), "{kind}");
            assert_eq!(FeatureKind::from_tag(kind.tag()), Some(kind));
            assert_eq!(kind.name().parse::<FeatureKind>().unwrap(), kind);
        }
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert_eq!("zcr".parse::<FeatureKind>().unwrap_err().kind(), "config");
        assert!(parse_kinds("mfcc,chroma_stft").is_ok());
        assert!(parse_kinds("").is_err());
    }

    #[test]
    fn rmse_of_constant() {
        for c in [0.0, 0.5, -0.3] {
            let w = Waveform::new(vec![c; 5000], 22050).unwrap();
            let r = extract_feature(FeatureKind::Rmse, &w).unwrap();
            assert!(r.data.data().iter().all(|v| (v - c.abs()).abs() < 1e-12));
        }
    }

    #[test]
    fn centroid_of_pure_tone() {
        let bin = 22050.0 / 1024.0;
        for hz in [440.0, 1000.0, 3150.0] {
            let c = extract_feature(FeatureKind::SpectralCentroid, &tone(hz, 0.8, 8192, 22050)).unwrap();
            for &v in c.data.data() {
                assert!((v - hz).abs() <= bin, "{hz}: {v}");
            }
        }
    }

    #[test]
    fn a4_chroma_peaks_at_a() {
        let c = extract_feature(FeatureKind::ChromaStft, &tone(440.0, 0.5, 8192, 22050)).unwrap();
        for f in 0..c.frames() {
            let row = c.data.row_slice(f);
            let arg = (0..12).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, 9);
        }
    }

    /// Direct evaluation of the DCT-II sum with the orthonormal scale.
    #[test]
    fn mfcc_matches_direct_dct() {
        let w = noise(3, 6000);
        let s = stft(&w, 1024, 512).unwrap();
        let lm = log_mel(&s, 64).unwrap();
        let m = mfcc(&s, 64, 13).unwrap();
        for f in 0..m.rows() {
            for k in 0..13 {
                let mut acc = 0.0;
                for j in 0..64 {
                    acc += lm.at(f, j) * (PI / 64.0 * (j as f64 + 0.5) * k as f64).cos();
                }
                acc *= if k == 0 { (1.0f64 / 64.0).sqrt() } else { (2.0f64 / 64.0).sqrt() };
                assert!((m.at(f, k) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cens_rows_are_unit_or_zero() {
        let mut samples = tone(330.0, 0.6, 6000, 22050).samples;
        samples.extend(vec![0.0; 30000]);
        let w = Waveform::new(samples, 22050).unwrap();
        let c = extract_feature(FeatureKind::ChromaCens, &w).unwrap();
        let mut zero = 0;
        for f in 0..c.frames() {
            let n = l2(c.data.row_slice(f));
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9, "{n}");
            zero += (n == 0.0) as usize;
        }
        assert!(zero > 0, "a long silent tail should leave zero frames");
    }

    #[test]
    fn contrast_edges_cover_octaves() {
        let e = contrast_band_edges(22050);
        assert_eq!(e, vec![0.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, 11025.0]);
    }

    #[test]
    fn tonnetz_basis_rows() {
        let phi = tonnetz_basis();
        // C (l = 0): sines vanish, cosines equal the radius
        let c: Vec<f64> = (0..6).map(|d| phi.at(d, 0)).collect();
        assert_eq!(c, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.5]);
        let t = tonnetz(&Tensor::matrix(1, 12, vec![0.0; 12]).unwrap());
        assert_eq!(t.data(), &[0.0; 6]);
    }

    #[test]
    fn raw_frames_scaled_and_trimmed() {
        let w = Waveform::new(vec![0.5; 2500], 22050).unwrap();
        let r = extract_feature(FeatureKind::RawFrames, &w).unwrap();
        assert_eq!(r.data.shape(), &[2, 1024]);
        assert!(r.data.data().iter().all(|&v| v == 128.0));
    }

    #[test]
    fn too_short_for_a_frame() {
        let w = Waveform::new(vec![0.1; 100], 22050).unwrap();
        assert_eq!(extract_feature(FeatureKind::Mfcc, &w).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn extractors_are_pure() {
        let w = noise(9, 7000);
        let a = extract_features(&FeatureKind::ALL, &w).unwrap();
        let b = extract_features(&FeatureKind::ALL, &w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.data), bits(&y.data));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn amplitude_scaling_laws(seed in 0u64..1000, s in 0.05f64..8.0) {
            let w = noise(seed, 4096);
            let ws = Waveform::new(w.samples.iter().map(|v| v * s).collect(), 22050).unwrap();
            let kinds = [FeatureKind::Rmse, FeatureKind::ChromaStft, FeatureKind::SpectralCentroid];
            let a = extract_features(&kinds, &w).unwrap();
            let b = extract_features(&kinds, &ws).unwrap();
            for (x, y) in a[0].data.data().iter().zip(b[0].data.data()) {
                prop_assert!((y - s * x).abs() <= 1e-9 * (s * x).abs().max(1e-12));
            }
            for (x, y) in a[1].data.data().iter().zip(b[1].data.data()) {
                prop_assert!((y - s * s * x).abs() <= 1e-9 * (s * s * x).abs().max(1e-12));
            }
            for (x, y) in a[2].data.data().iter().zip(b[2].data.data()) {
                prop_assert!((y - x).abs() <= 1e-9 * x.abs());
            }
        }
    }
}
