//! Seeded teacher training and student distillation over one LOSO fold.

mod config;
mod data;
mod run;
mod trainer;

pub use config::TrainConfig;
pub use data::{predict, Batch, Fold, FoldData};
pub use run::{
    run_label, seed_dir, seeded_run, test_metrics, Aggregate, ResolvedRun, RunKind, RunSummary,
    SeedResult, AGGREGATE_FILE, CHECKPOINT_FILE, LOG_FILE, RESOLVED_CONFIG_FILE,
};
pub use trainer::{
    distill_student, distillation_step, train_teacher, validation_mse, EpochRecord, StepRecord, TrainOutcome,
};
