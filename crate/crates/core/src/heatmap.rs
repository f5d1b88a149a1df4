//! Per-video attention tables: one row per utterance with its gold and
//! predicted label and its audio and text attention over the video.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{bail, Error, Result};
use crate::fusion::FusedPrediction;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapRow {
    pub utterance: String,
    pub gold: usize,
    pub predicted: usize,
    pub audio: Vec<f64>,
    pub text: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoHeatmap {
    pub video: String,
    pub rows: Vec<HeatmapRow>,
}

impl VideoHeatmap {
    pub fn from_predictions(video: &str, ids: &[String], golds: &[usize], preds: &[FusedPrediction]) -> Result<Self> {
        if ids.len() != preds.len() || golds.len() != preds.len() {
            bail!(Contract, "{} ids, {} golds and {} predictions", ids.len(), golds.len(), preds.len());
        }
        let rows = preds
            .iter()
            .zip(ids)
            .zip(golds)
            .map(|((p, id), &gold)| HeatmapRow {
                utterance: id.clone(),
                gold,
                predicted: p.label,
                audio: p.audio_weights.clone(),
                text: p.text_weights.clone(),
            })
            .collect();
        let map = VideoHeatmap {
            video: video.to_string(),
            rows,
        };
        map.validate()?;
        Ok(map)
    }

    /// Row count equals the width of every weight block, weights lie in
    /// `[0, 1]` and each block sums to 1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        for r in &self.rows {
            for (side, w) in [("audio", &r.audio), ("text", &r.text)] {
                if w.len() != n {
                    bail!(Data, "{}: {side} weights have {} entries for {n} utterances", r.utterance, w.len());
                }
                if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    bail!(Data, "{}: {side} weight outside [0, 1]", r.utterance);
                }
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    bail!(Data, "{}: {side} weights sum to {s}", r.utterance);
                }
            }
        }
        Ok(())
    }

    /// Tab-separated with a header line; weights printed in shortest
    /// round-trip form, so parsing recovers them exactly.
    pub fn to_tsv(&self) -> String {
        let n = self.rows.len();
        let mut header = vec!["utterance".to_string(), "gold".into(), "predicted".into()];
        header.extend((0..n).map(|j| format!("audio_{j}")));
        header.extend((0..n).map(|j| format!("text_{j}")));
        let mut out = header.join("\t");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.utterance.clone(), r.gold.to_string(), r.predicted.to_string()];
            cells.extend(r.audio.iter().chain(&r.text).map(|v| v.to_string()));
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(video: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data(format!("heatmap {video} is empty")))?;
        let columns = header.split('\t').count();
        if columns < 5 || (columns - 3) % 2 != 0 {
            bail!(Data, "heatmap {video} has a malformed header");
        }
        let n = (columns - 3) / 2;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != columns {
                bail!(Data, "heatmap {video} line {} has {} cells, expected {columns}", i + 2, cells.len());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Data(format!("heatmap {video}: {e}")));
            let lab = |s: &str| s.parse::<usize>().map_err(|e| Error::Data(format!("heatmap {video}: {e}")));
            let weights = cells[3..].iter().map(|c| num(c)).collect::<Result<Vec<f64>>>()?;
            rows.push(HeatmapRow {
                utterance: cells[0].to_string(),
                gold: lab(cells[1])?,
                predicted: lab(cells[2])?,
                audio: weights[..n].to_vec(),
                text: weights[n..].to_vec(),
            });
        }
        Ok(VideoHeatmap {
            video: video.to_string(),
            rows,
        })
    }
}

/// Writes `<dir>/<video>.tsv` for every map.
pub fn export_heatmaps(dir: impl AsRef<Path>, maps: &[VideoHeatmap]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    maps.iter()
        .map(|m| {
            let path = dir.join(format!("{}.tsv", m.video));
            fs::write(&path, m.to_tsv()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: usize, a: Vec<f64>, t: Vec<f64>) -> FusedPrediction {
        FusedPrediction {
            probabilities: vec![0.5, 0.5],
            label,
            z_audio: vec![],
            z_text: vec![],
            audio_weights: a,
            text_weights: t,
        }
    }

    #[test]
    fn tsv_roundtrip_is_exact() {
        let ids = vec!["v_u0".to_string(), "v_u1".to_string()];
        let preds = vec![
            pred(1, vec![0.25, 0.75], vec![0.5, 0.5]),
            pred(0, vec![1.0 / 3.0, 2.0 / 3.0], vec![0.9, 0.1]),
        ];
        let m = VideoHeatmap::from_predictions("v", &ids, &[1, 1], &preds).unwrap();
        let tsv = m.to_tsv();
        assert!(tsv.starts_with("utterance\tgold\tpredicted\taudio_0\taudio_1\ttext_0\ttext_1\n"));
        assert!(tsv.contains("v_u0\t1\t1\t0.25\t0.75\t0.5\t0.5\n"));
        let back = VideoHeatmap::parse_tsv("v", &tsv).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }

    #[test]
    fn rejects_bad_blocks() {
        let ids = vec!["a".to_string()];
        let bad = vec![pred(0, vec![0.5], vec![1.0])];
        assert_eq!(VideoHeatmap::from_predictions("v", &ids, &[0], &bad).unwrap_err().kind(), "data");
    }
}
