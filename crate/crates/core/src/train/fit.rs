use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, collect_grads, compute_metrics, AdamConfig, AdamState};
use crate::error::{bail, Result};
use crate::nn::{BatchNorm, ForwardCtx, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Var};

/// Mixes a base seed with stream coordinates (SplitMix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Summed loss and predictions over a set of units, in eval mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub loss_sum: f64,
    pub predictions: Vec<usize>,
    pub golds: Vec<usize>,
}

impl Evaluation {
    pub fn mean_loss(&self) -> f64 {
        if self.golds.is_empty() {
            0.0
        } else {
            self.loss_sum / self.golds.len() as f64
        }
    }
}

/// What a training stage optimizes. A unit is the smallest piece a batch
/// is built from: an utterance for a branch, a video for the fusion head.
pub trait Objective {
    /// Utterances in the unit; batches fill up to the batch size in these.
    fn unit_size(&self, unit: usize) -> usize;

    /// Summed loss over the units and the number of utterances it covers.
    fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, units: &[usize], ctx: &mut ForwardCtx) -> Result<(Var, usize)>;

    fn evaluate(&self, store: &ParamStore, units: &[usize]) -> Result<Evaluation>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl EpochStats {
    pub fn from_evaluation(e: &Evaluation, classes: usize) -> Result<Self> {
        let m = compute_metrics(&e.predictions, &e.golds, classes)?;
        Ok(EpochStats {
            loss: e.mean_loss(),
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    /// Eval-mode training loss before any update and after every epoch.
    pub train_curve: Vec<EpochStats>,
    pub val_curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept (0 means the initial ones).
    pub best_epoch: usize,
}

/// Groups shuffled units into batches of at least `batch_size` utterances
/// (the last batch may be smaller).
pub fn make_batches(units: &[usize], sizes: impl Fn(usize) -> usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = units.to_vec();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut filled = 0;
    for u in order {
        current.push(u);
        filled += sizes(u);
        if filled >= batch_size {
            batches.push(std::mem::take(&mut current));
            filled = 0;
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn better(candidate: &EpochStats, best: &EpochStats) -> bool {
    candidate.accuracy > best.accuracy || (candidate.accuracy == best.accuracy && candidate.loss < best.loss)
}

/// Mini-batch Adam over `trainable`. After the initial evaluation and
/// every epoch, the training (and validation, when given) units are
/// evaluated in eval mode and reported through `on_epoch`. The parameters
/// of the best validation epoch (training epoch without validation units)
/// are left in `store`.
///
/// With a zero learning rate the optimizer is skipped and batch-norm
/// running statistics are left untouched, so the whole loop is a no-op on
/// the store.
pub fn fit(
    store: &mut ParamStore,
    trainable: &[ParamId],
    objective: &dyn Objective,
    train_units: &[usize],
    val_units: &[usize],
    settings: &FitSettings,
    on_epoch: &mut dyn FnMut(usize, &EpochStats, Option<&EpochStats>),
) -> Result<FitOutcome> {
    if train_units.is_empty() {
        bail!(Data, "empty training split");
    }
    if settings.batch_size == 0 || settings.epochs == 0 {
        bail!(Config, "batch size and epoch count must be at least 1");
    }
    let mut adam = AdamState::new(settings.adam);
    let mut train_curve = Vec::with_capacity(settings.epochs + 1);
    let mut val_curve = Vec::new();
    let mut best: Option<(EpochStats, usize, ParamStore)> = None;

    for epoch in 0..=settings.epochs {
        if epoch > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &[epoch as u64]));
            let batches = make_batches(train_units, |u| objective.unit_size(u), settings.batch_size, &mut rng);
            for (b, batch) in batches.iter().enumerate() {
                let mut tape = Tape::new();
                let mut ctx = ForwardCtx::new(Mode::Train, derive_seed(settings.seed, &[epoch as u64, b as u64, 1]));
                let (sum, count) = objective.batch_loss(&mut tape, store, batch, &mut ctx)?;
                if settings.learning_rate == 0.0 {
                    continue;
                }
                let loss = tape.scale(sum, 1.0 / count.max(1) as f64)?;
                let grads = tape.backward(loss)?;
                let grads = collect_grads(store, trainable, &grads);
                adam_step(&mut adam, store, &grads, settings.learning_rate)?;
                for s in &ctx.bn_updates {
                    BatchNorm::update_running(store, s);
                }
            }
        }
        let train = EpochStats::from_evaluation(&objective.evaluate(store, train_units)?, settings.classes)?;
        let val = if val_units.is_empty() {
            None
        } else {
            Some(EpochStats::from_evaluation(
                &objective.evaluate(store, val_units)?,
                settings.classes,
            )?)
        };
        on_epoch(epoch, &train, val.as_ref());
        let judged = val.clone().unwrap_or_else(|| train.clone());
        if best.as_ref().is_none_or(|(b, _, _)| better(&judged, b)) {
            best = Some((judged, epoch, store.clone()));
        }
        train_curve.push(train);
        if let Some(v) = val {
            val_curve.push(v);
        }
    }
    let (_, best_epoch, snapshot) = best.expect("at least one epoch evaluated");
    *store = snapshot;
    Ok(FitOutcome {
        train_curve,
        val_curve,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::tensor::{Axis, Tensor};
    use crate::train::cross_entropy_sum;

    /// Logistic regression over fixed 2-d points.
    struct Points {
        layer: Dense,
        xs: Vec<[f64; 2]>,
        ys: Vec<usize>,
    }

    impl Objective for Points {
        fn unit_size(&self, _: usize) -> usize {
            1
        }

        fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, units: &[usize], _: &mut ForwardCtx) -> Result<(Var, usize)> {
            let rows: Vec<Vec<f64>> = units.iter().map(|&u| self.xs[u].to_vec()).collect();
            let x = tape.leaf(Tensor::from_rows(&rows)?)?;
            let logits = self.layer.forward(tape, store, x)?;
            let golds: Vec<usize> = units.iter().map(|&u| self.ys[u]).collect();
            Ok((cross_entropy_sum(tape, logits, &golds)?, units.len()))
        }

        fn evaluate(&self, store: &ParamStore, units: &[usize]) -> Result<Evaluation> {
            let mut tape = Tape::new();
            let (loss, _) = self.batch_loss(&mut tape, store, units, &mut ForwardCtx::eval())?;
            let rows: Vec<Vec<f64>> = units.iter().map(|&u| self.xs[u].to_vec()).collect();
            let x = tape.leaf(Tensor::from_rows(&rows)?)?;
            let logits = self.layer.forward(&mut tape, store, x)?;
            let p = tape.softmax(logits, Axis::Cols)?;
            let pv = tape.value(p);
            Ok(Evaluation {
                loss_sum: tape.value(loss).data()[0],
                predictions: (0..units.len()).map(|i| crate::fusion::argmax(pv.row_slice(i))).collect(),
                golds: units.iter().map(|&u| self.ys[u]).collect(),
            })
        }
    }

    fn setup() -> (ParamStore, Points) {
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "lr", 2, 2, false, &mut ChaCha8Rng::seed_from_u64(1));
        let xs: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 / 10.0 - 1.0, ((i * 7) % 5) as f64 / 5.0]).collect();
        let ys = xs.iter().map(|x| usize::from(x[0] > 0.0)).collect();
        (store, Points { layer, xs, ys })
    }

    fn settings(lr: f64) -> FitSettings {
        FitSettings {
            epochs: 30,
            batch_size: 4,
            learning_rate: lr,
            adam: AdamConfig::default(),
            seed: 3,
            classes: 2,
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut store, obj) = setup();
        let before = store.clone();
        let units: Vec<usize> = (0..20).collect();
        let out = {
            let ids = store.trainable_ids();
            fit(&mut store, &ids, &obj, &units, &[], &settings(0.0), &mut |_, _, _| {})
        }
        .unwrap();
        let l0 = out.train_curve[0].loss;
        assert!(out.train_curve.iter().all(|s| (s.loss - l0).abs() < 1e-12));
        for id in before.ids() {
            assert_eq!(before.get(id), store.get(id));
        }
    }

    #[test]
    fn separable_points_are_learned() {
        let (mut store, obj) = setup();
        let units: Vec<usize> = (0..20).collect();
        let out = {
            let ids = store.trainable_ids();
            fit(&mut store, &ids, &obj, &units, &[], &settings(0.05), &mut |_, _, _| {})
        }
        .unwrap();
        let c = &out.train_curve;
        assert!(c.windows(2).take(5).all(|w| w[1].loss < w[0].loss));
        assert_eq!(c[out.best_epoch].accuracy, 1.0);
        let again = {
            let (mut s2, o2) = setup();
            {
                let ids = s2.trainable_ids();
                fit(&mut s2, &ids, &o2, &units, &[], &settings(0.05), &mut |_, _, _| {})
            }
            .unwrap()
        };
        let bits = |c: &[EpochStats]| c.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out.train_curve), bits(&again.train_curve));
    }

    #[test]
    fn empty_split_is_a_data_error() {
        let (mut store, obj) = setup();
        let err = {
            let ids = store.trainable_ids();
            fit(&mut store, &ids, &obj, &[], &[], &settings(0.1), &mut |_, _, _| {})
        }
        .unwrap_err();
        assert_eq!(err.kind(), "data");
    }

    #[test]
    fn batches_cover_units_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&[0, 1, 2, 3, 4], |u| u + 1, 4, &mut rng);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(b[..b.len() - 1].iter().all(|x| x.iter().map(|u| u + 1).sum::<usize>() >= 4));
    }
}
