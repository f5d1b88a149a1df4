use super::{FeatureKind, FeatureSequence, Spectrogram};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular, area-normalized mel filterbank spanning `0 .. sr/2`,
/// shaped `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Tensor> {
    let bins = n_fft / 2 + 1;
    if n_mels == 0 || n_mels > bins {
        bail!(Config, "{n_mels} mel bands requested for {bins} frequency bins");
    }
    let fmax = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let fft_hz: Vec<f64> = (0..bins).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();
    let mut data = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for (k, &f) in fft_hz.iter().enumerate() {
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            data[m * bins + k] = rise.min(fall).max(0.0) * norm;
        }
        if data[m * bins..(m + 1) * bins].iter().all(|&v| v == 0.0) {
            bail!(
                Config,
                "mel band {m} ({left:.1}–{right:.1} Hz) covers no FFT bin; use fewer mel bands"
            );
        }
    }
    Tensor::matrix(n_mels, bins, data)
}

/// Mel band energies of the power spectrum, `frames × n_mels`, before any log.
pub fn mel_energies(s: &Spectrogram, filterbank: &Tensor) -> Tensor {
    let (frames, bins) = (s.frames(), s.bins());
    let n_mels = filterbank.rows();
    let mut out = vec![0.0; frames * n_mels];
    for f in 0..frames {
        let row = s.magnitudes.row_slice(f);
        for m in 0..n_mels {
            let fb = filterbank.row_slice(m);
            out[f * n_mels + m] = (0..bins).map(|k| fb[k] * row[k] * row[k]).sum();
        }
    }
    Tensor::matrix(frames, n_mels, out).expect("frames and bands are positive")
}

/// `ln(mel energy + 1e-10)` per frame and band. Standardization is applied
/// separately with statistics frozen from the training split.
pub fn logmel_spectrogram(s: &Spectrogram, n_mels: usize) -> Result<FeatureSequence> {
    let fb = mel_filterbank(s.sample_rate, s.window, n_mels)?;
    let mel = mel_energies(s, &fb);
    FeatureSequence::new(FeatureKind::LogMel, s.frame_rate(), mel.map(|v| (v + LOG_FLOOR).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, Waveform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mel_scale_roundtrip_and_breakpoint() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        for hz in [0.0, 300.0, 999.0, 1000.0, 4000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_rows_positive_and_contiguous() {
        for sr in [22050, 44100] {
            let fb = mel_filterbank(sr, 1024, 64).unwrap();
            for m in 0..64 {
                let row = fb.row_slice(m);
                assert!(row.iter().sum::<f64>() > 0.0);
                let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
                assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "band {m} has gaps");
            }
        }
    }

    #[test]
    fn too_many_bands() {
        assert_eq!(mel_filterbank(22050, 64, 40).unwrap_err().kind(), "config");
    }

    #[test]
    fn silence_gives_constant_log_floor() {
        let s = stft(&Waveform::new(vec![0.0; 4096], 22050).unwrap(), 1024, 512).unwrap();
        let lm = logmel_spectrogram(&s, 64).unwrap();
        assert!(lm.data.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn white_noise_matches_explicit_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples = (0..8192).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stft(&Waveform::new(samples, 22050).unwrap(), 1024, 512).unwrap();
        let fb = mel_filterbank(22050, 1024, 64).unwrap();
        let mel = mel_energies(&s, &fb);
        // power · fbᵀ, written as a plain triple loop
        for f in 0..s.frames() {
            for m in 0..64 {
                let mut acc = 0.0;
                for k in 0..s.bins() {
                    acc += s.magnitudes.at(f, k).powi(2) * fb.at(m, k);
                }
                assert!((mel.at(f, m) - acc).abs() < 1e-8);
            }
        }
    }
}
