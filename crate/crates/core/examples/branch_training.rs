//! Trains the text branch alone on a corpus where every transcript carries
//! a cue word, and prints its learning curve. Optional argument: epochs.

use sentifuse::config::RunConfig;
use sentifuse::data::{generate_synthetic_corpus, SyntheticSpec};
use sentifuse::model::prepare_corpus;
use sentifuse::text::EmbeddingTable;
use sentifuse::train::{run_experiment, Modality, Stages};

fn main() -> sentifuse::Result<()> {
    let spec = SyntheticSpec {
        utterances: 150,
        text_fraction: 1.0,
        audio_fraction: 0.0,
        ..SyntheticSpec::default()
    };
    let dir = std::env::temp_dir().join(format!("sentifuse-branch-{}", std::process::id()));
    let manifest = generate_synthetic_corpus(&spec)?.write(&dir)?;
    let table = EmbeddingTable::load(dir.join("embeddings.bin"))?;

    let mut cfg = RunConfig::small();
    cfg.train.runs = 1;
    cfg.train.branch_epochs = std::env::args().nth(1).map_or(60, |s| s.parse().unwrap());
    let corpus = prepare_corpus(&manifest, &table, &cfg.audio, &cfg.text)?;
    let exp = run_experiment(&corpus, table.width(), &cfg, Stages::Branch(Modality::Text))?;
    for r in exp.records.iter().filter(|r| r.split == "train") {
        println!("epoch {:>2}  loss {:.4}  accuracy {:.3}", r.epoch, r.loss, r.accuracy);
    }
    let test = exp.report.average.text.as_ref().expect("text branch was evaluated");
    println!("best epochs {:?}", exp.report.runs[0].best_epochs);
    println!("test accuracy {:.3}, macro-F1 {:.3}", test.accuracy, test.macro_f1);
    Ok(())
}
