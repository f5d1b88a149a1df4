use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusManifest, Split};
use crate::error::{bail, Result};

/// Video ids per side of a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// `round(n·ratio)` clamped so both sides keep at least one video.
pub fn train_count(videos: usize, ratio: f64) -> usize {
    ((videos as f64 * ratio).round() as usize).clamp(1, videos - 1)
}

/// Shuffles video ids (never utterances) with a seeded generator and
/// takes the first `train_count` for training.
pub fn split_videos(video_ids: &[String], ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        bail!(Config, "split ratio {ratio} must lie strictly between 0 and 1");
    }
    if video_ids.len() < 2 {
        bail!(Data, "need at least 2 videos to split, got {}", video_ids.len());
    }
    let mut ids = video_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(train_count(ids.len(), ratio));
    Ok(SplitAssignment { train: ids, test })
}

pub fn split_corpus(manifest: &CorpusManifest, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    let ids: Vec<String> = manifest.videos.iter().map(|v| v.id.clone()).collect();
    split_videos(&ids, ratio, seed)
}

/// Rewrites every record's split from an assignment.
pub fn apply_split(manifest: &CorpusManifest, split: &SplitAssignment) -> Result<CorpusManifest> {
    let mut records = manifest.records.clone();
    for r in &mut records {
        r.split = if split.test.contains(&r.video) { Split::Test } else { Split::Train };
    }
    CorpusManifest::from_records(manifest.classes, manifest.root.clone(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn ten_videos_at_seventy_percent() {
        let s = split_videos(&ids(10), 0.7, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
    }

    #[test]
    fn mosi_sized_division() {
        let s = split_videos(&ids(93), 0.7, 4).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (65, 28));
    }

    #[test]
    fn seeded_and_validated() {
        assert_eq!(split_videos(&ids(20), 0.7, 5).unwrap(), split_videos(&ids(20), 0.7, 5).unwrap());
        assert_eq!(split_videos(&ids(5), 1.0, 0).unwrap_err().kind(), "config");
        assert_eq!(split_videos(&ids(5), 0.0, 0).unwrap_err().kind(), "config");
        assert_eq!(split_videos(&ids(1), 0.5, 0).unwrap_err().kind(), "data");
    }

    proptest! {
        #[test]
        fn disjoint_and_complete(n in 2usize..60, ratio in 0.05f64..0.95, seed in 0u64..1000) {
            let s = split_videos(&ids(n), ratio, seed).unwrap();
            prop_assert!(s.train.iter().all(|v| !s.test.contains(v)));
            prop_assert_eq!(s.train.len() + s.test.len(), n);
            prop_assert!(!s.train.is_empty() && !s.test.is_empty());
        }
    }
}
