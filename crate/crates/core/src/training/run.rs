use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{predict, Fold, FoldData};
use super::trainer::{distill_student, train_teacher, TrainOutcome};
use crate::datagen::WindowedDataset;
use crate::error::{Error, Result};
use crate::eval::{mean_std, point_metrics_3d, PointMetrics};
use crate::models::{load_checkpoint, save_checkpoint, Network, NetworkSpec};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunKind {
    Teacher,
    Student { teacher: PathBuf },
}

/// Written to `config.resolved.json` before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub run: RunKind,
    pub config: TrainConfig,
    pub fold: Fold,
    pub window: usize,
    pub seeds: Vec<u64>,
    pub network: NetworkSpec,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub initial_val_rmse: f64,
    pub best_val_rmse: f64,
    pub last_val_rmse: f64,
    /// Held-out subject, best-validation weights.
    pub test: PointMetrics,
    /// Held-out subject, last-epoch weights.
    pub test_last: PointMetrics,
    pub parameter_count: usize,
    /// Teacher checksum before and after distillation (students only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub teacher_checksum: Option<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub test_mae: f64,
    pub test_r: f64,
}

/// Contents of `aggregate.json`: per-seed results with mean and sample std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub run: RunKind,
    pub label: String,
    pub held_out: u32,
    pub seeds: Vec<SeedResult>,
    pub mean: RunSummary,
    pub std: RunSummary,
}

fn rmse_x100(mse: f64) -> f64 {
    mse.sqrt() * 100.0
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

/// Test-set metrics of a network on the fold's held-out subject.
pub fn test_metrics(network: &Network, data: &FoldData<'_>) -> Result<PointMetrics> {
    let pred: Array3<f64> = predict(network, data, &data.test)?.mapv(f64::from);
    let truth: Array3<f64> = data.targets(&data.test).mapv(f64::from);
    point_metrics_3d(&pred, &truth)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::RunDirNotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A short run label such as `teacher-C3D-AE` or `student-SCKD`.
pub fn run_label(config: &TrainConfig, kind: &RunKind) -> String {
    match kind {
        RunKind::Teacher => format!("teacher-{}-{}", config.encoder_kind, config.mode),
        RunKind::Student { .. } => format!("student-{}", config.distiller),
    }
}

/// Trains `config.repeats` consecutive seeds on one fold and writes the run directory.
pub fn seeded_run(
    config: &TrainConfig,
    dataset: &WindowedDataset,
    kind: &RunKind,
    dir: &Path,
) -> Result<Aggregate> {
    config.validate()?;
    let ids = dataset.subject_ids();
    let held_out = config.held_out.unwrap_or_else(|| ids.first().copied().unwrap_or(0));
    let fold = Fold::new(dataset, held_out, config.validation)?;
    let data = FoldData::new(dataset, fold.clone());
    let teacher = match kind {
        RunKind::Teacher => None,
        RunKind::Student { teacher } => Some(load_checkpoint(teacher)?.0),
    };
    let spec = match kind {
        RunKind::Teacher => config.teacher_spec(dataset.window),
        RunKind::Student { .. } => config.student_spec(dataset.window),
    };
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|k| config.seed + k).collect();
    prepare_dir(dir)?;
    write_json(
        &dir.join(RESOLVED_CONFIG_FILE),
        &ResolvedRun {
            run: kind.clone(),
            config: config.clone(),
            fold: fold.clone(),
            window: dataset.window,
            seeds: seeds.clone(),
            learning_rate: config.learning_rate(spec.encoder_kind),
            network: spec,
        },
    )?;

    let mut results = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        log::info!("{}: seed {seed}", run_label(config, kind));
        let (outcome, checksums): (TrainOutcome, _) = match &teacher {
            None => (train_teacher(config, &data, seed)?, None),
            Some(t) => {
                let before = t.checksum();
                let out = distill_student(config, t, &data, seed)?;
                (out, Some((format!("{before:016x}"), format!("{:016x}", t.checksum()))))
            }
        };
        let sdir = seed_dir(dir, seed);
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        save_checkpoint(&outcome.best, seed, outcome.best_epoch, &sdir.join(CHECKPOINT_FILE))?;
        outcome.write_log(&sdir.join(LOG_FILE))?;
        results.push(SeedResult {
            seed,
            best_epoch: outcome.best_epoch,
            initial_val_rmse: rmse_x100(outcome.initial_val_mse),
            best_val_rmse: rmse_x100(outcome.best_val_mse()),
            last_val_rmse: rmse_x100(outcome.last_val_mse()),
            test: test_metrics(&outcome.best, &data)?,
            test_last: test_metrics(&outcome.last, &data)?,
            parameter_count: crate::nn::Module::parameter_count(&outcome.best),
            teacher_checksum: checksums,
        });
    }

    let stat = |f: &dyn Fn(&SeedResult) -> f64| mean_std(&results.iter().map(f).collect::<Vec<_>>());
    let cols = [
        stat(&|r| r.best_val_rmse),
        stat(&|r| r.test.rmse),
        stat(&|r| r.test.mae),
        stat(&|r| r.test.r),
    ];
    let aggregate = Aggregate {
        run: kind.clone(),
        label: run_label(config, kind),
        held_out,
        mean: RunSummary {
            val_rmse: cols[0].0,
            test_rmse: cols[1].0,
            test_mae: cols[2].0,
            test_r: cols[3].0,
        },
        std: RunSummary {
            val_rmse: cols[0].1,
            test_rmse: cols[1].1,
            test_mae: cols[2].1,
            test_r: cols[3].1,
        },
        seeds: results,
    };
    write_json(&dir.join(AGGREGATE_FILE), &aggregate)?;
    Ok(aggregate)
}
