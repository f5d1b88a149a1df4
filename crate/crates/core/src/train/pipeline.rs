use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, fit, loss_sum, multi_run_average, EpochStats, Evaluation, FitSettings, LossKind, MetricsReport, Objective};
use crate::audio::AudioInputs;
use crate::config::RunConfig;
use crate::data::{split_videos, Split};
use crate::error::{bail, Error, Result};
use crate::fusion::argmax;
use crate::heatmap::{export_heatmaps, VideoHeatmap};
use crate::model::{Model, PreparedCorpus, AUDIO_HEAD_PREFIX, AUDIO_PREFIX, FUSION_PREFIX, TEXT_HEAD_PREFIX, TEXT_PREFIX};
use crate::nn::{DropoutSpec, ForwardCtx};
use crate::params::ParamStore;
use crate::tensor::{Axis, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

/// Which part of the pipeline a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stages {
    /// Stage one for a single branch.
    Branch(Modality),
    /// Both branches, then the fusion head.
    Full,
}

fn sum_losses(tape: &mut Tape, losses: Vec<Var>) -> Result<Var> {
    let stacked = tape.concat(&losses, Axis::Rows)?;
    tape.sum(stacked)
}

/// Stage one: a branch and its own classifier head, one utterance per unit.
pub struct BranchObjective<'a> {
    pub model: &'a Model,
    pub corpus: &'a PreparedCorpus,
    pub inputs: &'a [Option<AudioInputs>],
    pub modality: Modality,
    pub loss: LossKind,
}

impl BranchObjective<'_> {
    fn logits(&self, tape: &mut Tape, store: &ParamStore, u: usize, ctx: &mut ForwardCtx) -> Result<Var> {
        let utt = &self.corpus.utterances[u];
        let missing = || Error::Data(format!("utterance {} has no {} input", utt.id, self.modality.name()));
        match self.modality {
            Modality::Audio => {
                let inputs = self.inputs[u].as_ref().ok_or_else(missing)?;
                Ok(self.model.audio_logits(tape, store, inputs, ctx)?.1)
            }
            Modality::Text => {
                let embedded = utt.text.as_ref().ok_or_else(missing)?;
                Ok(self.model.text_logits(tape, store, embedded, ctx)?.1)
            }
        }
    }
}

impl Objective for BranchObjective<'_> {
    fn unit_size(&self, _: usize) -> usize {
        1
    }

    fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, units: &[usize], ctx: &mut ForwardCtx) -> Result<(Var, usize)> {
        let mut losses = Vec::with_capacity(units.len());
        for &u in units {
            let logits = self.logits(tape, store, u, ctx)?;
            losses.push(loss_sum(self.loss, tape, logits, &[self.corpus.utterances[u].label])?);
        }
        Ok((sum_losses(tape, losses)?, units.len()))
    }

    fn evaluate(&self, store: &ParamStore, units: &[usize]) -> Result<Evaluation> {
        let mut e = Evaluation::default();
        for &u in units {
            let mut tape = Tape::new();
            let logits = self.logits(&mut tape, store, u, &mut ForwardCtx::eval())?;
            let gold = self.corpus.utterances[u].label;
            let l = loss_sum(self.loss, &mut tape, logits, &[gold])?;
            e.loss_sum += tape.value(l).data()[0];
            e.predictions.push(argmax(tape.value(logits).data()));
            e.golds.push(gold);
        }
        Ok(e)
    }
}

/// Per-video branch vectors computed once with the branches frozen.
pub type VectorCache = Vec<Option<(Tensor, Tensor)>>;

/// Stage two. With a cache the branches are frozen and only the fusion
/// head runs; without one every forward goes through both branches.
pub struct FusionObjective<'a> {
    pub model: &'a Model,
    pub corpus: &'a PreparedCorpus,
    pub inputs: &'a [Option<AudioInputs>],
    pub cache: Option<&'a VectorCache>,
    pub loss: LossKind,
}

impl FusionObjective<'_> {
    fn logits(&self, tape: &mut Tape, store: &ParamStore, v: usize, ctx: &mut ForwardCtx) -> Result<crate::fusion::FusionOutput> {
        match self.cache {
            Some(cache) => {
                let Some((a, t)) = &cache[v] else {
                    bail!(Contract, "video {} missing from the vector cache", self.corpus.videos[v].id);
                };
                let (a, t) = (tape.leaf(a.clone())?, tape.leaf(t.clone())?);
                self.model.fusion.forward(tape, store, a, t, ctx)
            }
            None => self.model.predict_video(tape, store, self.corpus, self.inputs, v, ctx),
        }
    }

    fn golds(&self, v: usize) -> Vec<usize> {
        self.corpus.videos[v]
            .members
            .iter()
            .map(|&u| self.corpus.utterances[u].label)
            .collect()
    }

    /// Eval-mode predictions and heatmaps for the given videos.
    pub fn predict(&self, store: &ParamStore, videos: &[usize]) -> Result<(Evaluation, Vec<VideoHeatmap>)> {
        let mut e = Evaluation::default();
        let mut maps = Vec::with_capacity(videos.len());
        for &v in videos {
            let mut tape = Tape::new();
            let out = self.logits(&mut tape, store, v, &mut ForwardCtx::eval())?;
            let golds = self.golds(v);
            let l = loss_sum(self.loss, &mut tape, out.logits, &golds)?;
            e.loss_sum += tape.value(l).data()[0];
            let preds = out.read(&tape);
            e.predictions.extend(preds.iter().map(|p| p.label));
            e.golds.extend(&golds);
            let video = &self.corpus.videos[v];
            let ids: Vec<String> = video.members.iter().map(|&u| self.corpus.utterances[u].id.clone()).collect();
            maps.push(VideoHeatmap::from_predictions(&video.id, &ids, &golds, &preds)?);
        }
        Ok((e, maps))
    }
}

impl Objective for FusionObjective<'_> {
    fn unit_size(&self, v: usize) -> usize {
        self.corpus.videos[v].members.len()
    }

    fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, units: &[usize], ctx: &mut ForwardCtx) -> Result<(Var, usize)> {
        let mut losses = Vec::with_capacity(units.len());
        let mut count = 0;
        for &v in units {
            let out = self.logits(tape, store, v, ctx)?;
            let golds = self.golds(v);
            count += golds.len();
            losses.push(loss_sum(self.loss, tape, out.logits, &golds)?);
        }
        Ok((sum_losses(tape, losses)?, count))
    }

    fn evaluate(&self, store: &ParamStore, units: &[usize]) -> Result<Evaluation> {
        Ok(self.predict(store, units)?.0)
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run: usize,
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Test-split results of one trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub audio: Option<MetricsReport>,
    pub text: Option<MetricsReport>,
    pub fused: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub branch_dropout: f64,
    pub best_epochs: BTreeMap<String, usize>,
    pub test: TestReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub classes: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub runs: Vec<RunSummary>,
    pub average: TestReport,
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub store: ParamStore,
    pub heatmaps: Vec<VideoHeatmap>,
    /// Eval-mode training loss per epoch, keyed by stage.
    pub curves: BTreeMap<String, Vec<f64>>,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub runs: Vec<RunOutcome>,
    pub records: Vec<MetricsRecord>,
    pub model: Model,
}

/// Test-split metrics of a trained model, plus heatmaps when the fusion
/// head is evaluated.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    corpus: &PreparedCorpus,
    stages: Stages,
    loss: LossKind,
) -> Result<(TestReport, Vec<VideoHeatmap>)> {
    let inputs = model.all_audio_inputs(store, corpus)?;
    let test_videos = corpus.videos_in(Split::Test);
    if test_videos.is_empty() {
        bail!(Data, "empty test split");
    }
    let test_utts = corpus.utterances_of(&test_videos);
    let k = corpus.classes;
    let branch = |modality: Modality| -> Result<Option<MetricsReport>> {
        let units: Vec<usize> = test_utts
            .iter()
            .copied()
            .filter(|&u| match modality {
                Modality::Audio => inputs[u].is_some(),
                Modality::Text => corpus.utterances[u].text.is_some(),
            })
            .collect();
        if units.is_empty() {
            return Ok(None);
        }
        let obj = BranchObjective {
            model,
            corpus,
            inputs: &inputs,
            modality,
            loss,
        };
        let e = obj.evaluate(store, &units)?;
        Ok(Some(super::compute_metrics(&e.predictions, &e.golds, k)?))
    };
    let mut report = TestReport::default();
    let mut maps = Vec::new();
    match stages {
        Stages::Branch(Modality::Audio) => report.audio = branch(Modality::Audio)?,
        Stages::Branch(Modality::Text) => report.text = branch(Modality::Text)?,
        Stages::Full => {
            report.audio = branch(Modality::Audio)?;
            report.text = branch(Modality::Text)?;
            let obj = FusionObjective {
                model,
                corpus,
                inputs: &inputs,
                cache: None,
                loss,
            };
            let (e, m) = obj.predict(store, &test_videos)?;
            report.fused = Some(super::compute_metrics(&e.predictions, &e.golds, k)?);
            maps = m;
        }
    }
    Ok((report, maps))
}

fn average(reports: &[TestReport]) -> Result<TestReport> {
    let avg = |pick: &dyn Fn(&TestReport) -> Option<MetricsReport>| -> Result<Option<MetricsReport>> {
        let rs: Vec<MetricsReport> = reports.iter().filter_map(pick).collect();
        if rs.is_empty() {
            Ok(None)
        } else {
            multi_run_average(&rs).map(Some)
        }
    };
    Ok(TestReport {
        audio: avg(&|r| r.audio.clone())?,
        text: avg(&|r| r.text.clone())?,
        fused: avg(&|r| r.fused.clone())?,
    })
}

struct StageLog<'a> {
    run: usize,
    records: &'a mut Vec<MetricsRecord>,
}

impl StageLog<'_> {
    fn fit(
        &mut self,
        stage: &str,
        store: &mut ParamStore,
        ids: &[crate::params::ParamId],
        objective: &dyn Objective,
        units: (&[usize], &[usize]),
        settings: &FitSettings,
    ) -> Result<super::FitOutcome> {
        let run = self.run;
        let records = &mut *self.records;
        let mut push = |epoch: usize, split: &str, s: &EpochStats| {
            records.push(MetricsRecord {
                run,
                stage: stage.to_string(),
                epoch,
                split: split.to_string(),
                loss: s.loss,
                accuracy: s.accuracy,
                macro_f1: s.macro_f1,
            })
        };
        fit(store, ids, objective, units.0, units.1, settings, &mut |epoch, train, val| {
            push(epoch, "train", train);
            if let Some(v) = val {
                push(epoch, "validation", v);
            }
        })
    }
}

/// Trains and tests `cfg.train.runs` models with seeds `seed, seed + 1, …`
/// and averages their test metrics.
pub fn run_experiment(corpus: &PreparedCorpus, embedding_width: usize, cfg: &RunConfig, stages: Stages) -> Result<Experiment> {
    cfg.validate()?;
    if corpus.classes != cfg.fusion.classes {
        bail!(
            Config,
            "manifest declares {} classes, configuration has {}",
            corpus.classes,
            cfg.fusion.classes
        );
    }
    let train_videos = corpus.videos_in(Split::Train);
    if train_videos.is_empty() {
        bail!(Data, "empty training split");
    }
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut last_model = None;
    for r in 0..cfg.train.runs {
        let seed = cfg.train.seed.wrapping_add(r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xD0]));
        let [lo, hi] = cfg.train.branch_dropout;
        let dropout = DropoutSpec::drawn(lo, hi, &mut rng)?.rate;
        let (model, mut store) = Model::new(cfg.model(), embedding_width, dropout, seed)?;

        // hold out validation videos from the training split
        let (fit_videos, val_videos) = if train_videos.len() >= 2 {
            let ids: Vec<String> = train_videos.iter().map(|&v| corpus.videos[v].id.clone()).collect();
            let s = split_videos(&ids, 1.0 - cfg.train.validation_fraction, derive_seed(seed, &[0x5A]))?;
            let pick = |names: &[String]| -> Vec<usize> {
                train_videos
                    .iter()
                    .copied()
                    .filter(|&v| names.contains(&corpus.videos[v].id))
                    .collect()
            };
            (pick(&s.train), pick(&s.test))
        } else {
            (train_videos.clone(), Vec::new())
        };
        let fit_utts = corpus.utterances_of(&fit_videos);
        let val_utts = corpus.utterances_of(&val_videos);
        model.fit_standardizers(&mut store, corpus, &fit_utts)?;
        let inputs = model.all_audio_inputs(&store, corpus)?;

        let mut log = StageLog {
            run: r,
            records: &mut records,
        };
        let mut best_epochs = BTreeMap::new();
        let mut curves = BTreeMap::new();
        let branch_settings = FitSettings {
            epochs: cfg.train.branch_epochs,
            batch_size: cfg.train.branch_batch_size,
            learning_rate: cfg.train.learning_rate,
            adam: cfg.train.adam,
            seed: derive_seed(seed, &[1]),
            classes: corpus.classes,
        };
        let modalities: &[Modality] = match stages {
            Stages::Branch(m) => match m {
                Modality::Audio => &[Modality::Audio],
                Modality::Text => &[Modality::Text],
            },
            Stages::Full => &[Modality::Audio, Modality::Text],
        };
        for &m in modalities {
            let has = |u: &usize| match m {
                Modality::Audio => inputs[*u].is_some(),
                Modality::Text => corpus.utterances[*u].text.is_some(),
            };
            let units: Vec<usize> = fit_utts.iter().copied().filter(has).collect();
            let val: Vec<usize> = val_utts.iter().copied().filter(has).collect();
            if units.is_empty() {
                bail!(Data, "no training utterances with {} input", m.name());
            }
            let prefixes = match m {
                Modality::Audio => [AUDIO_PREFIX, AUDIO_HEAD_PREFIX],
                Modality::Text => [TEXT_PREFIX, TEXT_HEAD_PREFIX],
            };
            let ids = Model::params_under(&store, &prefixes);
            let obj = BranchObjective {
                model: &model,
                corpus,
                inputs: &inputs,
                modality: m,
                loss: cfg.train.branch_loss,
            };
            let settings = FitSettings {
                seed: derive_seed(branch_settings.seed, &[m as u64]),
                ..branch_settings.clone()
            };
            let out = log.fit(m.name(), &mut store, &ids, &obj, (&units, &val), &settings)?;
            best_epochs.insert(m.name().to_string(), out.best_epoch);
            curves.insert(m.name().to_string(), out.train_curve.iter().map(|s| s.loss).collect());
        }

        if stages == Stages::Full {
            // branches frozen: cache each video's ASV and TSV rows once
            let mut cache: VectorCache = vec![None; corpus.videos.len()];
            for &v in fit_videos.iter().chain(&val_videos) {
                let mut tape = Tape::new();
                let (a, t) = model.video_vectors(&mut tape, &store, corpus, &inputs, v, &mut ForwardCtx::eval())?;
                cache[v] = Some((tape.value(a).clone(), tape.value(t).clone()));
            }
            let fusion_ids = Model::params_under(&store, &[FUSION_PREFIX]);
            let settings = FitSettings {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                learning_rate: cfg.train.learning_rate,
                adam: cfg.train.adam,
                seed: derive_seed(seed, &[2]),
                classes: corpus.classes,
            };
            let frozen = FusionObjective {
                model: &model,
                corpus,
                inputs: &inputs,
                cache: Some(&cache),
                loss: cfg.train.loss,
            };
            let out = log.fit("fusion", &mut store, &fusion_ids, &frozen, (&fit_videos, &val_videos), &settings)?;
            best_epochs.insert("fusion".into(), out.best_epoch);
            curves.insert("fusion".into(), out.train_curve.iter().map(|s| s.loss).collect());

            if cfg.train.finetune_epochs > 0 {
                let all = Model::params_under(&store, &[AUDIO_PREFIX, TEXT_PREFIX, FUSION_PREFIX]);
                let full = FusionObjective { cache: None, ..frozen };
                let settings = FitSettings {
                    epochs: cfg.train.finetune_epochs,
                    seed: derive_seed(seed, &[3]),
                    ..settings
                };
                let out = log.fit("finetune", &mut store, &all, &full, (&fit_videos, &val_videos), &settings)?;
                best_epochs.insert("finetune".into(), out.best_epoch);
                curves.insert("finetune".into(), out.train_curve.iter().map(|s| s.loss).collect());
            }
        }

        let (test, heatmaps) = evaluate_model(&model, &store, corpus, stages, cfg.train.loss)?;
        runs.push(RunOutcome {
            summary: RunSummary {
                run: r,
                seed,
                branch_dropout: dropout,
                best_epochs,
                test,
            },
            store,
            heatmaps,
            curves,
        });
        last_model = Some(model);
    }
    let tests: Vec<TestReport> = runs.iter().map(|o| o.summary.test.clone()).collect();
    let test_utterances = corpus.utterances_of(&corpus.videos_in(Split::Test)).len();
    let report = ExperimentReport {
        classes: corpus.classes,
        train_utterances: corpus.utterances.len() - test_utterances,
        test_utterances,
        runs: runs.iter().map(|o| o.summary.clone()).collect(),
        average: average(&tests)?,
    };
    Ok(Experiment {
        report,
        runs,
        records,
        model: last_model.expect("at least one run"),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn checkpoint_name(run: usize) -> String {
    format!("checkpoint-run{run}.bin")
}

/// Writes `config.toml`, `metrics.jsonl`, `report.json`, one checkpoint
/// per run and `heatmaps/run<r>/<video>.tsv`.
pub fn write_run_dir(dir: impl AsRef<Path>, cfg: &RunConfig, exp: &Experiment) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    write(&dir.join("metrics.jsonl"), metrics_jsonl(&exp.records))?;
    let report = serde_json::to_string_pretty(&exp.report).expect("report serializes");
    write(&dir.join("report.json"), report + "\n")?;
    for o in &exp.runs {
        o.store.to_container().save(dir.join(checkpoint_name(o.summary.run)))?;
        if !o.heatmaps.is_empty() {
            export_heatmaps(dir.join("heatmaps").join(format!("run{}", o.summary.run)), &o.heatmaps)?;
        }
    }
    Ok(())
}
