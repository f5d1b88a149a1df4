use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 512;

/// Magnitude STFT, `frames × (window/2 + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Tensor,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window_fn: &'static str,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.rows()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.cols()
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub fn frame_count(len: usize, window: usize, hop: usize) -> Option<usize> {
    (len >= window && window > 0 && hop > 0).then(|| 1 + (len - window) / hop)
}

/// Hann-windowed magnitude spectrum of each frame. No implicit padding:
/// frame `f` covers samples `f·hop .. f·hop + window`.
pub fn stft(w: &Waveform, window: usize, hop: usize) -> Result<Spectrogram> {
    if window < 2 || hop == 0 {
        bail!(Config, "stft window {window} and hop {hop} must be positive (window ≥ 2)");
    }
    let Some(frames) = frame_count(w.len(), window, hop) else {
        bail!(
            Dimension,
            "signal of {} samples is shorter than the {window}-sample window",
            w.len()
        );
    };
    let bins = window / 2 + 1;
    let win = hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &w.samples[f * hop..f * hop + window];
        for ((b, s), wv) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new(s * wv, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        magnitudes: Tensor::matrix(frames, bins, out)?,
        window,
        hop,
        sample_rate: w.sample_rate,
        window_fn: "hann",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n²) DFT magnitude of a Hann-windowed frame.
    fn naive_frame(seg: &[f64]) -> Vec<f64> {
        let n = seg.len();
        let win = hann(n);
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, (&x, &wv)) in seg.iter().zip(&win).enumerate() {
                    let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    re += x * wv * ang.cos();
                    im += x * wv * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn bin_centered_sine_peaks_at_its_bin() {
        let sr = 22050;
        let k = 40;
        let f = k as f64 * sr as f64 / 1024.0;
        let samples = (0..4096).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin()).collect();
        let s = stft(&Waveform::new(samples, sr).unwrap(), 1024, 512).unwrap();
        assert_eq!(s.frames(), 7);
        assert_eq!(s.bins(), 513);
        for fr in 0..s.frames() {
            let row = s.magnitudes.row_slice(fr);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, k);
        }
    }

    #[test]
    fn silence_is_silent() {
        let s = stft(&Waveform::new(vec![0.0; 2048], 22050).unwrap(), 1024, 512).unwrap();
        assert!(s.magnitudes.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn short_signal_is_a_dimension_error() {
        let err = stft(&Waveform::new(vec![0.0; 1000], 22050).unwrap(), 1024, 512).unwrap_err();
        assert_eq!(err.kind(), "dimension");
    }

    #[test]
    fn fifty_random_signals_match_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let len = rng.gen_range(1024..=8192);
            let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = stft(&Waveform::new(samples.clone(), 22050).unwrap(), 1024, 512).unwrap();
            assert_eq!(s.frames(), 1 + (len - 1024) / 512);
            for f in (0..s.frames()).step_by(3) {
                let expect = naive_frame(&samples[f * 512..f * 512 + 1024]);
                let worst = s
                    .magnitudes
                    .row_slice(f)
                    .iter()
                    .zip(&expect)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(worst < 1e-8, "len {len} frame {f}: {worst}");
            }
        }
    }

    #[test]
    fn random_signal_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stft(&Waveform::new(samples.clone(), 22050).unwrap(), 1024, 512).unwrap();
        for f in 0..s.frames() {
            let expect = naive_frame(&samples[f * 512..f * 512 + 1024]);
            for (a, b) in s.magnitudes.row_slice(f).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
