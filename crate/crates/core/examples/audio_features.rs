//! Extracts every acoustic feature kind from a two-note signal.

use std::f64::consts::PI;

use sentifuse::dsp::{extract_features, stft, FeatureKind, Waveform, DEFAULT_HOP, DEFAULT_WINDOW};

fn main() -> sentifuse::Result<()> {
    let rate = 22050;
    // A4 then E5
    let samples: Vec<f64> = (0..2 * rate)
        .map(|i| {
            let f = if i < rate { 440.0 } else { 659.25 };
            0.5 * (2.0 * PI * f * i as f64 / rate as f64).sin()
        })
        .collect();
    let w = Waveform::new(samples, rate as u32)?;
    let s = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP)?;
    println!("stft: {} frames × {} bins at {:.1} frames/s", s.frames(), s.bins(), s.frame_rate());

    for f in extract_features(&FeatureKind::ALL, &w)? {
        println!("{:<18} {:>3} frames × {:>4} dims", f.kind.name(), f.frames(), f.dims());
        if f.kind == FeatureKind::ChromaStft {
            let names = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
            for frame in [5, f.frames() - 5] {
                let row = f.data.row_slice(frame);
                let peak = (0..12).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                println!("    frame {frame}: strongest pitch class {}", names[peak]);
            }
        }
    }
    Ok(())
}
