//! Generates the default synthetic corpus and summarizes which utterances
//! carry label information in each modality.

use std::collections::BTreeMap;

use sentifuse::data::{generate_synthetic_corpus, Split, SyntheticSpec};

fn main() -> sentifuse::Result<()> {
    let spec = SyntheticSpec::default();
    let corpus = generate_synthetic_corpus(&spec)?;
    let dir = std::env::temp_dir().join(format!("sentifuse-corpus-{}", std::process::id()));
    let manifest = corpus.write(&dir)?;
    let (train, test) = manifest.split_counts();
    println!(
        "{} utterances in {} videos, train {train}, test {test}",
        manifest.records.len(),
        manifest.videos.len()
    );

    let split: BTreeMap<&str, Split> = manifest.records.iter().map(|r| (r.id.as_str(), r.split)).collect();
    let mut groups: BTreeMap<(bool, bool), usize> = BTreeMap::new();
    for t in corpus.truth.iter().filter(|t| split[t.id.as_str()] == Split::Test) {
        *groups.entry((t.audio_informative, t.text_informative)).or_default() += 1;
    }
    for ((audio, text), n) in &groups {
        println!("test utterances with audio cue {audio:<5} text cue {text:<5}: {n}");
    }
    let r = &manifest.records[0];
    println!("first record: {} in {} says {:?}, label {}", r.id, r.video, r.text, r.label);
    println!("written to {}", dir.display());
    Ok(())
}
