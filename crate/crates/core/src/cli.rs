//! The `sentifuse` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{generate_synthetic_corpus, load_manifest, Split, SyntheticSpec};
use crate::dsp::{extract_features, load_wav, parse_kinds, save_feature_cache};
use crate::error::{Error, Result};
use crate::gradcheck::run_grad_check;
use crate::heatmap::export_heatmaps;
use crate::model::{prepare_corpus, Model, PreparedCorpus};
use crate::params::ParamStore;
use crate::text::EmbeddingTable;
use crate::train::{evaluate_model, run_experiment, write_run_dir, Modality, Stages, TestReport};

#[derive(Debug, Parser)]
#[command(
    name = "sentifuse",
    version,
    about = "Audio-text sentiment fusion: corpora, features, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (manifest, WAV files, embeddings, ground truth).
    GenSynthetic(GenSyntheticArgs),
    /// Extract acoustic features into one cache file per utterance and kind.
    Extract(ExtractArgs),
    /// Train one unimodal branch with its own classifier head.
    TrainBranch(TrainBranchArgs),
    /// Train both branches, then the fusion head, and evaluate on the test split.
    TrainFusion(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Write per-video attention heatmaps of a checkpoint on the test split.
    ExportHeatmap(ExportArgs),
    /// Finite-difference gradient check of every layer and the fused micro model.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Audio,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Audio => Modality::Audio,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Corpus specification (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the specification's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the specification's class count.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated feature kinds, e.g. mfcc,chroma_stft.
    #[arg(long)]
    pub kinds: String,
    /// Output directory for `<utterance>.<kind>` files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run configuration (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed of the first run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of runs averaged (default 3).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Overrides the audio LSTM feature kinds, comma-separated.
    #[arg(long)]
    pub kinds: Option<String>,
    /// Overrides the class count; must match the manifest.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainBranchArgs {
    /// Branch to train.
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run configuration the checkpoint was trained with, e.g. `<run>/config.toml`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint container, e.g. `<run>/checkpoint-run0.bin`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Overrides the class count; must match the manifest.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: CheckpointArgs,
    /// Evaluate one branch only, for checkpoints from train-branch.
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    /// Directory to write `evaluation.json` into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub source: CheckpointArgs,
    /// Output directory for `<video>.tsv` files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Run configuration (TOML); only its `[gradcheck]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trial seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory to write `gradcheck.json` into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status: 0 on success, 2 on usage errors, 1 on any other error.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(&e));
            1
        }
    }
}

/// `error[<kind>]: <message>` on one line.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {}", e.kind(), e.to_string().replace(['\n', '\r'], " "))
}

fn out_line(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(line)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        out_line($out, format_args!($($arg)*))?
    };
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenSynthetic(a) => gen_synthetic(a, out),
        Command::Extract(a) => extract(a, out),
        Command::TrainBranch(a) => train(a.train, Stages::Branch(a.modality.into()), out),
        Command::TrainFusion(a) => train(a, Stages::Full, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::ExportHeatmap(a) => export_heatmap(a, out),
        Command::GradCheck(a) => grad_check(a, out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn gen_synthetic(a: GenSyntheticArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            toml::from_str::<SyntheticSpec>(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(k) = a.classes {
        spec.classes = k;
    }
    let corpus = generate_synthetic_corpus(&spec)?;
    let manifest = corpus.write(&a.out)?;
    let (train, test) = manifest.split_counts();
    say!(
        out,
        "wrote {} utterances in {} videos to {} (train {train}, test {test})",
        manifest.records.len(),
        manifest.videos.len(),
        a.out.display()
    );
    Ok(())
}

fn extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let kinds = parse_kinds(&a.kinds)?;
    let manifest = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let mut files = 0;
    for r in &manifest.records {
        let Some(path) = manifest.wav_path(r) else {
            continue;
        };
        let w = load_wav(&path)?;
        let seqs = extract_features(&kinds, &w).map_err(|e| match e {
            Error::Dimension(m) => Error::Data(format!("utterance {}: {m}", r.id)),
            other => other,
        })?;
        for s in &seqs {
            save_feature_cache(a.out.join(format!("{}.{}", r.id, s.kind)), s)?;
            files += 1;
        }
    }
    say!(out, "wrote {files} feature files to {}", a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml(&read_text(p)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn load_corpus(manifest_path: &Path, cfg: &RunConfig) -> Result<(PreparedCorpus, usize)> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.classes != cfg.fusion.classes {
        return Err(Error::Config(format!(
            "manifest declares {} classes, configuration has {}",
            manifest.classes, cfg.fusion.classes
        )));
    }
    let embeddings = manifest.root.join(&cfg.data.embeddings);
    let table = EmbeddingTable::load(&embeddings)?;
    let corpus = prepare_corpus(&manifest, &table, &cfg.audio, &cfg.text)?;
    Ok((corpus, table.width()))
}

fn accuracy_line(report: &TestReport) -> String {
    let parts: Vec<String> = [("audio", &report.audio), ("text", &report.text), ("fused", &report.fused)]
        .iter()
        .filter_map(|(name, m)| m.as_ref().map(|m| format!("{name} acc {:.4} f1 {:.4}", m.accuracy, m.macro_f1)))
        .collect();
    parts.join(", ")
}

fn train(a: TrainArgs, stages: Stages, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = a.runs {
        cfg.train.runs = r;
    }
    if let Some(k) = &a.kinds {
        cfg.audio.kinds = parse_kinds(k)?;
    }
    if let Some(c) = a.classes {
        cfg.fusion.classes = c;
    }
    cfg.validate()?;
    let (corpus, width) = load_corpus(&a.manifest, &cfg)?;
    let exp = run_experiment(&corpus, width, &cfg, stages)?;
    write_run_dir(&a.out, &cfg, &exp)?;
    for r in &exp.report.runs {
        say!(out, "run {} (seed {}): {}", r.run, r.seed, accuracy_line(&r.test));
    }
    say!(
        out,
        "average over {} runs: {}",
        exp.report.runs.len(),
        accuracy_line(&exp.report.average)
    );
    say!(out, "wrote {}", a.out.display());
    Ok(())
}

fn load_checkpoint(a: &CheckpointArgs) -> Result<(RunConfig, Model, ParamStore, PreparedCorpus)> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(c) = a.classes {
        cfg.fusion.classes = c;
    }
    cfg.validate()?;
    let (corpus, width) = load_corpus(&a.manifest, &cfg)?;
    let (model, mut store) = Model::new(cfg.model(), width, 0.0, cfg.train.seed)?;
    let bytes = fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let container = crate::container::Container::from_bytes(&bytes)?;
    store.load_container(&container)?;
    Ok((cfg, model, store, corpus))
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, model, store, corpus) = load_checkpoint(&a.source)?;
    let stages = a.modality.map_or(Stages::Full, |m| Stages::Branch(m.into()));
    let (report, _) = evaluate_model(&model, &store, &corpus, stages, cfg.train.loss)?;
    let test = corpus.utterances_of(&corpus.videos_in(Split::Test)).len();
    say!(out, "{test} test utterances: {}", accuracy_line(&report));
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("evaluation.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        say!(out, "wrote {}", path.display());
    }
    Ok(())
}

fn export_heatmap(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, model, store, corpus) = load_checkpoint(&a.source)?;
    let (_, maps) = evaluate_model(&model, &store, &corpus, Stages::Full, cfg.train.loss)?;
    export_heatmaps(&a.out, &maps)?;
    say!(out, "wrote {} heatmaps to {}", maps.len(), a.out.display());
    Ok(())
}

fn grad_check(a: GradCheckArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.gradcheck;
    let started = std::time::Instant::now();
    let summary = run_grad_check(&cfg, a.seed, &mut |_, _| {})?;
    for c in &summary.checks {
        let verdict = if c.max_error < cfg.tolerance { "ok" } else { "FAIL" };
        say!(
            out,
            "{:<20} {verdict:<4} worst relative error {:.3e} over {} coordinates",
            c.name,
            c.max_error,
            c.coordinates
        );
    }
    say!(
        out,
        "{} trials in {:.1}s, {} failing",
        summary.trials,
        started.elapsed().as_secs_f64(),
        summary.failures.len()
    );
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("gradcheck.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if !summary.passed() {
        let (trial, name) = summary.failures[0];
        return Err(Error::Oracle(format!(
            "{} of {} trials exceed relative error {:e}, first: trial {trial} {name}",
            summary
                .failures
                .iter()
                .map(|f| f.0)
                .collect::<std::collections::BTreeSet<_>>()
                .len(),
            summary.trials,
            cfg.tolerance
        )));
    }
    Ok(())
}
