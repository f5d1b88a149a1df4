use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::text::{tokenize, PosTag};

pub const FIELDS: [&str; 9] = ["id", "video", "speaker", "wav", "text", "pos", "label", "score", "split"];
const REQUIRED: [&str; 7] = ["id", "video", "speaker", "wav", "text", "label", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One line of the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub video: String,
    pub speaker: String,
    /// Relative paths resolve against the manifest's directory. `null`
    /// marks an utterance without audio.
    pub wav: Option<PathBuf>,
    /// Transcript; empty marks an utterance without text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<PosTag>>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub split: Split,
}

impl UtteranceRecord {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// Positive when the averaged score is strictly above zero.
pub fn score_to_label(score: f64) -> usize {
    usize::from(score > 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub classes: usize,
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoGroup {
    pub id: String,
    pub split: Split,
    /// Indices into [`CorpusManifest::records`], in file order.
    pub utterances: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub classes: usize,
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
    pub videos: Vec<VideoGroup>,
}

fn list(items: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = items.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        s.push_str(&format!(" and {} more", items.len() - SHOWN));
    }
    s
}

impl CorpusManifest {
    /// Validates every record invariant and groups records by video in order
    /// of first appearance.
    pub fn from_records(classes: usize, root: impl Into<PathBuf>, records: Vec<UtteranceRecord>) -> Result<Self> {
        let root = root.into();
        if records.is_empty() {
            bail!(Data, "no utterances");
        }
        if classes < 2 {
            bail!(Data, "manifest declares {classes} classes, need at least 2");
        }
        let mut seen = BTreeSet::new();
        let mut duplicates = Vec::new();
        let mut bad_labels = Vec::new();
        let mut missing = Vec::new();
        let mut bad_pos = Vec::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                duplicates.push(r.id.clone());
            }
            let score_ok = match r.score {
                None => true,
                Some(s) => (-3.0..=3.0).contains(&s) && (classes != 2 || score_to_label(s) == r.label),
            };
            if r.label >= classes || !score_ok {
                bad_labels.push(r.id.clone());
            }
            if let Some(w) = &r.wav {
                if !root.join(w).is_file() {
                    missing.push(format!("{} ({})", r.id, w.display()));
                }
            }
            if let Some(p) = &r.pos {
                if p.len() != r.tokens().len() {
                    bad_pos.push(r.id.clone());
                }
            }
        }
        if !duplicates.is_empty() {
            bail!(Data, "duplicate utterance ids: {}", list(&duplicates));
        }
        if !bad_labels.is_empty() {
            bail!(
                Data,
                "labels outside 0..{classes} or disagreeing with their score: {}",
                list(&bad_labels)
            );
        }
        if !missing.is_empty() {
            bail!(Data, "missing waveform files: {}", list(&missing));
        }
        if !bad_pos.is_empty() {
            bail!(Data, "POS tag count differs from token count: {}", list(&bad_pos));
        }

        let mut videos: Vec<VideoGroup> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut overlapping = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            match index.get(r.video.as_str()) {
                Some(&v) => {
                    if videos[v].split != r.split {
                        overlapping.insert(r.video.clone());
                    }
                    videos[v].utterances.push(i);
                }
                None => {
                    index.insert(&r.video, videos.len());
                    videos.push(VideoGroup {
                        id: r.video.clone(),
                        split: r.split,
                        utterances: vec![i],
                    });
                }
            }
        }
        if !overlapping.is_empty() {
            let v: Vec<String> = overlapping.into_iter().collect();
            bail!(Data, "videos in both splits: {}", list(&v));
        }
        Ok(CorpusManifest {
            classes,
            root,
            records,
            videos,
        })
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.records.iter().filter(|r| r.split == Split::Train).count();
        (train, self.records.len() - train)
    }

    pub fn videos_in(&self, split: Split) -> impl Iterator<Item = &VideoGroup> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn wav_path(&self, record: &UtteranceRecord) -> Option<PathBuf> {
        record.wav.as_ref().map(|w| self.root.join(w))
    }

    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            classes: self.classes,
            fields: FIELDS.iter().map(|s| s.to_string()).collect(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest text. Line 1 is the header, every further non-blank
/// line one record.
pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<CorpusManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else {
        bail!(Data, "no utterances");
    };
    let header: ManifestHeader = serde_json::from_str(first).map_err(|e| Error::Data(format!("manifest header: {e}")))?;
    let unknown: Vec<String> = header.fields.iter().filter(|f| !FIELDS.contains(&f.as_str())).cloned().collect();
    if !unknown.is_empty() {
        bail!(Data, "unknown manifest fields: {}", list(&unknown));
    }
    let absent: Vec<String> = REQUIRED
        .iter()
        .filter(|f| !header.fields.iter().any(|h| h == *f))
        .map(|s| s.to_string())
        .collect();
    if !absent.is_empty() {
        bail!(Data, "manifest header lacks required fields: {}", list(&absent));
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let r: UtteranceRecord = serde_json::from_str(line).map_err(|e| Error::Data(format!("manifest line {}: {e}", n + 1)))?;
        records.push(r);
    }
    CorpusManifest::from_records(header.classes, root, records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, video: &str, split: Split) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            video: video.into(),
            speaker: format!("spk-{video}"),
            wav: None,
            text: "a fine film".into(),
            pos: None,
            label: 1,
            score: None,
            split,
        }
    }

    const HEADER: &str = r#"{"classes":2,"fields":["id","video","speaker","wav","text","pos","label","score","split"]}"#;

    #[test]
    fn empty_manifest() {
        let err = parse_manifest(HEADER, ".").unwrap_err();
        assert_eq!(err.kind(), "data");
        assert!(err.to_string().contains("no utterances"));
        assert!(parse_manifest("", ".").unwrap_err().to_string().contains("no utterances"));
    }

    #[test]
    fn groups_by_video() {
        let m = CorpusManifest::from_records(2, ".", vec![record("u1", "v", Split::Train), record("u2", "v", Split::Train)]).unwrap();
        assert_eq!(m.videos.len(), 1);
        assert_eq!(m.videos[0].utterances, vec![0, 1]);
    }

    #[test]
    fn rejects_invariant_violations() {
        let dup = vec![record("u1", "a", Split::Train), record("u1", "b", Split::Train)];
        assert!(CorpusManifest::from_records(2, ".", dup).unwrap_err().to_string().contains("u1"));
        let overlap = vec![record("u1", "a", Split::Train), record("u2", "a", Split::Test)];
        let err = CorpusManifest::from_records(2, ".", overlap).unwrap_err();
        assert!(err.to_string().contains("both splits"));
        let mut wav = record("u9", "a", Split::Train);
        wav.wav = Some("nowhere/u9.wav".into());
        let err = CorpusManifest::from_records(2, ".", vec![wav]).unwrap_err();
        assert!(err.to_string().contains("u9"));
        let mut lab = record("u3", "a", Split::Train);
        lab.label = 2;
        assert_eq!(CorpusManifest::from_records(2, ".", vec![lab]).unwrap_err().kind(), "data");
        let mut sc = record("u4", "a", Split::Train);
        sc.score = Some(0.0);
        assert!(CorpusManifest::from_records(2, ".", vec![sc]).is_err());
    }

    #[test]
    fn score_boundary_is_negative() {
        assert_eq!(score_to_label(0.0), 0);
        assert_eq!(score_to_label(-2.4), 0);
        assert_eq!(score_to_label(0.2), 1);
    }

    #[test]
    fn jsonl_roundtrip_and_header_checks() {
        let mut r = record("u1", "v", Split::Test);
        r.pos = Some(vec![PosTag::Det, PosTag::Adj, PosTag::Noun]);
        r.score = Some(1.5);
        let m = CorpusManifest::from_records(2, ".", vec![r]).unwrap();
        let back = parse_manifest(&m.to_jsonl(), ".").unwrap();
        assert_eq!(back, m);
        let bad = m.to_jsonl().replace("\"split\"]", "\"split\",\"mood\"]");
        assert!(parse_manifest(&bad, ".").unwrap_err().to_string().contains("mood"));
        let extra = format!("{HEADER}\n{{\"id\":\"x\",\"video\":\"v\",\"speaker\":\"s\",\"wav\":null,\"text\":\"\",\"label\":0,\"split\":\"train\",\"mood\":1}}");
        assert_eq!(parse_manifest(&extra, ".").unwrap_err().kind(), "data");
    }

    #[test]
    fn table_two_shape_counts() {
        let dir = tempfile::tempdir().unwrap();
        let w = crate::dsp::Waveform::new(vec![0.0; 16], 22050).unwrap();
        crate::dsp::write_wav_pcm16(dir.path().join("tiny.wav"), &w).unwrap();
        let mut records = Vec::new();
        for i in 0..1616 {
            let mut r = record(&format!("tr{i}"), &format!("trv{}", i / 25), Split::Train);
            r.wav = Some("tiny.wav".into());
            records.push(r);
        }
        for i in 0..583 {
            let mut r = record(&format!("te{i}"), &format!("tev{}", i / 21), Split::Test);
            r.wav = Some("tiny.wav".into());
            records.push(r);
        }
        let m = CorpusManifest::from_records(2, dir.path(), records).unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.split_counts(), (1616, 583));
    }
}
