//! Writes a 16-bit PCM tone, reads it back and reports the quantization error.

use std::f64::consts::PI;

use sentifuse::dsp::{load_wav, write_wav_pcm16, Waveform};

fn main() -> sentifuse::Result<()> {
    let rate = 16000;
    let samples: Vec<f64> = (0..rate).map(|i| 0.6 * (2.0 * PI * 330.0 * i as f64 / rate as f64).sin()).collect();
    let tone = Waveform::new(samples, rate as u32)?;
    let path = std::env::temp_dir().join(format!("sentifuse-tone-{}.wav", std::process::id()));
    write_wav_pcm16(&path, &tone)?;
    let back = load_wav(&path)?;
    let err = tone
        .samples
        .iter()
        .zip(&back.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{}: {} samples at {} Hz, {:.2} s, max error {err:.2e} (one 16-bit step is {:.2e})",
        path.display(),
        back.len(),
        back.sample_rate,
        back.duration_secs(),
        1.0 / 32768.0
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
