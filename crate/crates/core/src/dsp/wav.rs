use std::fs;
use std::path::Path;

use crate::container::Reader;
use crate::error::{bail, Error, Result};

/// Mono audio at a declared sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            bail!(Contract, "sample rate must be positive");
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Maps a `[-1, 1]` waveform to `[-256, 256]`. The mean is left alone.
pub fn scale_waveform(w: &Waveform) -> Result<Waveform> {
    if w.is_empty() {
        bail!(Contract, "cannot scale an empty waveform");
    }
    Ok(Waveform {
        samples: w.samples.iter().map(|s| s * 256.0).collect(),
        sample_rate: w.sample_rate,
    })
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Parses a RIFF/WAVE image holding 16-bit PCM or 32-bit float samples,
/// mono or stereo. Samples come back in `[-1, 1]`, stereo averaged.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != b"RIFF" {
        return Err(Error::format(0, "missing RIFF tag"));
    }
    r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::format(8, "missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    loop {
        let at = r.pos as u64;
        if r.pos + 8 > bytes.len() {
            return Err(Error::format(at, "no data chunk"));
        }
        let id: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let size = r.u32()? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format(at, format!("fmt chunk too short ({size} bytes)")));
                }
                let body_at = r.pos;
                let mut format = r.u16()?;
                let channels = r.u16()?;
                let rate = r.u32()?;
                r.u32()?;
                r.u16()?;
                let bits = r.u16()?;
                if format == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::format(at, "extensible fmt chunk too short"));
                    }
                    r.take(8)?;
                    format = r.u16()?;
                }
                r.pos = body_at + size + (size & 1);
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let Some((format, channels, rate, bits)) = fmt else {
                    return Err(Error::format(at, "data chunk before fmt chunk"));
                };
                let fmt_at = 12;
                if channels == 0 || channels > 2 {
                    return Err(Error::format(fmt_at, format!("unsupported channel count {channels}")));
                }
                if rate == 0 {
                    return Err(Error::format(fmt_at, "sample rate is zero"));
                }
                let width = match (format, bits) {
                    (FORMAT_PCM, 16) => 2,
                    (FORMAT_FLOAT, 32) => 4,
                    _ => return Err(Error::format(fmt_at, format!("unsupported codec (format {format}, {bits} bits)"))),
                };
                let available = bytes.len() - r.pos;
                let size = size.min(available);
                let frame = width * channels as usize;
                let body = r.take(size - size % frame)?;
                let decode = |c: &[u8]| -> f64 {
                    if width == 2 {
                        i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0
                    } else {
                        f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64
                    }
                };
                let samples = body
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f64 = f.chunks_exact(width).map(decode).sum();
                        sum / channels as f64
                    })
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {
                let skip = size + (size & 1);
                if r.pos + skip > bytes.len() {
                    return Err(Error::format(at, "chunk runs past end of file"));
                }
                r.pos += skip;
            }
        }
    }
}

/// Serializes a mono waveform as 16-bit PCM, clamping to the int16 range.
pub fn wav_pcm16_bytes(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, wav_pcm16_bytes(w)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembles a WAV image with arbitrary sample bytes.
    pub fn wav_image(format: u16, channels: u16, rate: u32, bits: u16, body: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + body.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        let align = channels * bits / 8;
        out.extend_from_slice(&(rate * align as u32).to_le_bytes());
        out.extend_from_slice(&align.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(body);
        out
    }

    #[test]
    fn one_second_of_silence() {
        let img = wav_image(1, 1, 22050, 16, &vec![0u8; 22050 * 2]);
        let w = parse_wav(&img).unwrap();
        assert_eq!(w.sample_rate, 22050);
        assert_eq!(w.samples, vec![0.0; 22050]);
    }

    #[test]
    fn full_scale_square_wave() {
        let body: Vec<u8> = [32767i16, -32767, 32767, -32767].iter().flat_map(|v| v.to_le_bytes()).collect();
        let w = parse_wav(&wav_image(1, 1, 8000, 16, &body)).unwrap();
        let s = 32767.0 / 32768.0;
        assert_eq!(w.samples, vec![s, -s, s, -s]);
    }

    #[test]
    fn antiphase_stereo_averages_to_silence() {
        let body: Vec<u8> = [1000i16, -1000, -250, 250, 32767, -32767]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let w = parse_wav(&wav_image(1, 2, 44100, 16, &body)).unwrap();
        assert_eq!(w.samples, vec![0.0; 3]);
    }

    #[test]
    fn float32_samples() {
        let body: Vec<u8> = [0.5f32, -0.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let w = parse_wav(&wav_image(3, 1, 44100, 32, &body)).unwrap();
        assert_eq!(w.samples, vec![0.5, -0.25]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        match parse_wav(b"RIFX....WAVE") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let img = wav_image(1, 1, 8000, 24, &[0u8; 6]);
        match parse_wav(&img) {
            Err(Error::Format { offset: 12, message }) => assert!(message.contains("codec")),
            other => panic!("{other:?}"),
        }
        let mut cut = wav_image(1, 1, 8000, 16, &[0u8; 4]);
        cut.truncate(30);
        assert!(matches!(parse_wav(&cut), Err(Error::Format { .. })));
    }

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 0.999, -1.0], 22050).unwrap();
        let back = parse_wav(&wav_pcm16_bytes(&w)).unwrap();
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn scaling_law() {
        let w = Waveform::new(vec![1.0; 4], 22050).unwrap();
        assert_eq!(scale_waveform(&w).unwrap().samples, vec![256.0; 4]);
        let z = Waveform::new(vec![0.0; 4], 22050).unwrap();
        assert_eq!(scale_waveform(&z).unwrap().samples, vec![0.0; 4]);
        let e = Waveform::new(vec![], 22050).unwrap();
        assert_eq!(scale_waveform(&e).unwrap_err().kind(), "contract");
    }
}
