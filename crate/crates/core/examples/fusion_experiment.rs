//! Trains the full two-stage model on a fresh synthetic corpus and prints
//! unimodal and fused test accuracy.

use std::time::Instant;

use sentifuse::config::RunConfig;
use sentifuse::data::{generate_synthetic_corpus, SyntheticSpec};
use sentifuse::model::prepare_corpus;
use sentifuse::text::EmbeddingTable;
use sentifuse::train::{run_experiment, Stages};

fn main() -> sentifuse::Result<()> {
    let dir = std::env::temp_dir().join("sentifuse-fusion-example");
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default())?;
    let manifest = corpus.write(&dir)?;
    let table = EmbeddingTable::load(dir.join("embeddings.bin"))?;

    // optional argument: a configuration file; defaults to the small preset
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::small(),
    };
    let t = Instant::now();
    let prepared = prepare_corpus(&manifest, &table, &cfg.audio, &cfg.text)?;
    println!("features ready in {:.1?}", t.elapsed());
    let exp = run_experiment(&prepared, table.width(), &cfg, Stages::Full)?;
    for run in &exp.report.runs {
        let acc = |m: &Option<sentifuse::train::MetricsReport>| m.as_ref().map_or(f64::NAN, |m| m.accuracy);
        println!(
            "run {}: audio {:.3} text {:.3} fused {:.3} best {:?}",
            run.run,
            acc(&run.test.audio),
            acc(&run.test.text),
            acc(&run.test.fused),
            run.best_epochs
        );
    }
    if std::env::var_os("SHOW_CURVES").is_some() {
        for r in &exp.records {
            println!("{} {} {} {:.4} {:.3}", r.stage, r.epoch, r.split, r.loss, r.accuracy);
        }
    }
    println!("total {:.1?}", t.elapsed());
    Ok(())
}
