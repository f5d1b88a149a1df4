//! Corpus manifests, video-level splits and the synthetic
//! complementary-modality corpus.

mod manifest;
mod split;
mod synthetic;

pub use manifest::{
    load_manifest, parse_manifest, score_to_label, CorpusManifest, ManifestHeader, Split, UtteranceRecord, VideoGroup, FIELDS,
};
pub use split::{apply_split, split_corpus, split_videos, train_count, SplitAssignment};
pub use synthetic::{
    generate_synthetic_corpus, load_truth, SyntheticCorpus, SyntheticSpec, TruthRecord, EMBEDDINGS_FILE, MANIFEST_FILE, TRUTH_FILE,
};
