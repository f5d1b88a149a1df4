//! Trains a short fused model and writes one attention heatmap per test video.

use sentifuse::config::RunConfig;
use sentifuse::data::{generate_synthetic_corpus, SyntheticSpec};
use sentifuse::heatmap::export_heatmaps;
use sentifuse::model::prepare_corpus;
use sentifuse::text::EmbeddingTable;
use sentifuse::train::{run_experiment, Stages};

fn main() -> sentifuse::Result<()> {
    let spec = SyntheticSpec {
        utterances: 100,
        ..SyntheticSpec::default()
    };
    let dir = std::env::temp_dir().join(format!("sentifuse-heatmaps-{}", std::process::id()));
    let manifest = generate_synthetic_corpus(&spec)?.write(dir.join("corpus"))?;
    let table = EmbeddingTable::load(dir.join("corpus/embeddings.bin"))?;

    let mut cfg = RunConfig::small();
    cfg.train.runs = 1;
    cfg.train.branch_epochs = 10;
    cfg.train.epochs = 10;
    let corpus = prepare_corpus(&manifest, &table, &cfg.audio, &cfg.text)?;
    let exp = run_experiment(&corpus, table.width(), &cfg, Stages::Full)?;
    let maps = &exp.runs[0].heatmaps;
    let paths = export_heatmaps(dir.join("heatmaps"), maps)?;
    println!("wrote {} heatmaps, e.g. {}", paths.len(), paths[0].display());
    print!("{}", maps[0].to_tsv());
    Ok(())
}
