//! Losses, Adam, metrics and the staged training pipeline.

mod adam;
mod fit;
mod losses;
mod metrics;
mod pipeline;

pub use adam::{adam_step, collect_grads, AdamConfig, AdamState};
pub use fit::{derive_seed, fit, make_batches, EpochStats, Evaluation, FitOutcome, FitSettings, Objective};
pub use losses::{cross_entropy, cross_entropy_sum, loss_sum, mae, mae_sum, LossKind};
pub use metrics::{compute_metrics, f_beta, multi_run_average, ClassMetrics, MetricsReport};
pub use pipeline::{
    checkpoint_name, evaluate_model, metrics_jsonl, run_experiment, write_run_dir, BranchObjective, Experiment, ExperimentReport,
    FusionObjective, MetricsRecord, Modality, RunOutcome, RunSummary, Stages, TestReport, VectorCache,
};
