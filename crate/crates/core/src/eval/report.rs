//! Leave-one-subject-out reports over an experiment directory laid out as
//! `fold_<subject>/<model>/` run directories. Predictions are written next to
//! the report so every number in it can be recomputed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::metrics::{calibration_error, mean_std, per_window_r, point_metrics_3d};
use crate::datagen::{WindowedDataset, FEET};
use crate::error::{Error, Result};
use crate::losses::Distiller;
use crate::models::load_checkpoint;
use crate::nn::Module;
use crate::training::{
    predict, seed_dir, FoldData, ResolvedRun, RunKind, CHECKPOINT_FILE, RESOLVED_CONFIG_FILE,
};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const PREDICTIONS_DIR: &str = "predictions";
const ECE_BINS: usize = 10;

pub fn fold_dir(root: &Path, subject: u32) -> PathBuf {
    root.join(format!("fold_{subject}"))
}

/// One line of metrics. Force errors are x100 normalized units; `bw_*` are in
/// percent of body weight; `r` values are x100; ECE in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub rmse: f64,
    pub mae: f64,
    pub r: f64,
    pub r_window: f64,
    pub ece_left: f64,
    pub ece_right: f64,
    pub ece_avg: f64,
    pub bw_rmse: f64,
    pub bw_mae: f64,
}

impl MetricRow {
    const FIELDS: usize = 9;

    fn to_array(self) -> [f64; Self::FIELDS] {
        [
            self.rmse,
            self.mae,
            self.r,
            self.r_window,
            self.ece_left,
            self.ece_right,
            self.ece_avg,
            self.bw_rmse,
            self.bw_mae,
        ]
    }

    fn from_array(a: [f64; Self::FIELDS]) -> Self {
        MetricRow {
            rmse: a[0],
            mae: a[1],
            r: a[2],
            r_window: a[3],
            ece_left: a[4],
            ece_right: a[5],
            ece_avg: a[6],
            bw_rmse: a[7],
            bw_mae: a[8],
        }
    }

    /// Column-wise mean and sample standard deviation.
    pub fn mean_std(rows: &[MetricRow]) -> (MetricRow, MetricRow) {
        let mut mean = [0.0; Self::FIELDS];
        let mut std = [0.0; Self::FIELDS];
        for k in 0..Self::FIELDS {
            let col: Vec<f64> = rows.iter().map(|r| r.to_array()[k]).collect();
            (mean[k], std[k]) = mean_std(&col);
        }
        (Self::from_array(mean), Self::from_array(std))
    }
}

/// Metrics of `[n, 2, t]` predictions. `train_max_bw` converts normalized
/// units back to body weights.
pub fn metric_row(pred: &Array3<f64>, truth: &Array3<f64>, train_max_bw: f64) -> Result<MetricRow> {
    let point = point_metrics_3d(pred, truth)?;
    let cal = calibration_error(pred, truth, ECE_BINS)?;
    Ok(MetricRow {
        rmse: point.rmse,
        mae: point.mae,
        r: point.r,
        r_window: per_window_r(pred, truth)?,
        ece_left: cal.ece_left,
        ece_right: cal.ece_right,
        ece_avg: cal.ece_avg,
        bw_rmse: point.rmse * train_max_bw,
        bw_mae: point.mae * train_max_bw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub metrics: MetricRow,
    /// Relative to the experiment root.
    pub predictions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    /// Held-out subject.
    pub subject: u32,
    pub validation: u32,
    pub windows: usize,
    /// Largest training-split force in body weights.
    pub train_max_bw: f64,
    /// Relative to the experiment root.
    pub truth: String,
    pub seeds: Vec<SeedEntry>,
    pub mean: MetricRow,
    pub std: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub label: String,
    pub parameter_count: usize,
    pub folds: Vec<FoldEntry>,
    /// Unweighted mean of the fold means.
    pub mean: MetricRow,
    /// Sample standard deviation over every (fold, seed) run.
    pub std: MetricRow,
}

/// Per-subject RMSE of the scratch student against the SCKD student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSubject {
    pub subject: u32,
    pub scratch_rmse: f64,
    pub sckd_rmse: f64,
    /// SCKD minus scratch; negative means distillation helped.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub scratch: String,
    pub sckd: String,
    pub subjects: Vec<PairedSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: usize,
    pub subjects: Vec<u32>,
    pub models: Vec<ModelReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired: Option<PairedComparison>,
}

fn write_f32le(path: &Path, values: &Array3<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a stored `[n, 2, window]` prediction or truth tensor.
pub fn read_predictions(path: &Path, window: usize) -> Result<Array3<f32>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let record = 4 * FEET * window;
    if window == 0 || bytes.len() % record != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of records", bytes.len()),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array3::from_shape_vec((bytes.len() / record, FEET, window), values)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn read_resolved(dir: &Path) -> Result<ResolvedRun> {
    let path = dir.join(RESOLVED_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.clone()),
        _ => Error::io(&path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn model_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().join(RESOLVED_CONFIG_FILE).is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Evaluates every model found under `fold_<s>/` for each subject of `dataset`
/// on its held-out subject, writing predictions under `predictions/`.
pub fn loso_evaluate(root: &Path, dataset: &WindowedDataset) -> Result<MetricsReport> {
    let subjects = dataset.subject_ids();
    if subjects.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    for &s in &subjects {
        if !fold_dir(root, s).is_dir() {
            return Err(Error::MissingArtifact(fold_dir(root, s)));
        }
    }
    let names = model_names(&fold_dir(root, subjects[0]))?;
    if names.is_empty() {
        return Err(Error::MissingArtifact(
            fold_dir(root, subjects[0]).join("<model>").join(RESOLVED_CONFIG_FILE),
        ));
    }
    let pred_root = root.join(PREDICTIONS_DIR);

    let mut models = Vec::with_capacity(names.len());
    let mut kinds = Vec::with_capacity(names.len());
    for name in &names {
        let mut folds = Vec::with_capacity(subjects.len());
        let mut all_rows = Vec::new();
        let mut parameter_count = 0;
        let mut label = String::new();
        for &subject in &subjects {
            let run_dir = fold_dir(root, subject).join(name);
            let resolved = read_resolved(&run_dir)?;
            if resolved.fold.held_out != subject {
                return Err(Error::Format {
                    path: run_dir.join(RESOLVED_CONFIG_FILE),
                    reason: format!(
                        "run holds out subject {} but sits in fold {subject}",
                        resolved.fold.held_out
                    ),
                });
            }
            if resolved.window != dataset.window {
                return Err(Error::shape(dataset.window, resolved.window));
            }
            if folds.is_empty() {
                label = crate::training::run_label(&resolved.config, &resolved.run);
                kinds.push((resolved.run.clone(), resolved.config.distiller));
            }
            let train_max_bw = dataset.scaling.grf_ceiling_bw / resolved.fold.grf_scale;
            let data = FoldData::new(dataset, resolved.fold.clone());
            let truth32 = data.targets(&data.test);
            let truth = truth32.mapv(f64::from);
            let truth_path = pred_root.join(format!("fold_{subject}")).join("truth.f32");
            write_f32le(&truth_path, &truth32)?;

            let mut seeds = Vec::with_capacity(resolved.seeds.len());
            for &seed in &resolved.seeds {
                let (network, _) = load_checkpoint(&seed_dir(&run_dir, seed).join(CHECKPOINT_FILE))?;
                parameter_count = network.parameter_count();
                let pred32 = predict(&network, &data, &data.test)?;
                let path = pred_root
                    .join(format!("fold_{subject}"))
                    .join(name)
                    .join(format!("seed_{seed}.f32"));
                write_f32le(&path, &pred32)?;
                let metrics = metric_row(&pred32.mapv(f64::from), &truth, train_max_bw)?;
                all_rows.push(metrics);
                seeds.push(SeedEntry {
                    seed,
                    metrics,
                    predictions: rel(&path, root),
                });
            }
            let rows: Vec<MetricRow> = seeds.iter().map(|s| s.metrics).collect();
            let (mean, std) = MetricRow::mean_std(&rows);
            folds.push(FoldEntry {
                subject,
                validation: resolved.fold.validation,
                windows: data.test.len(),
                train_max_bw,
                truth: rel(&truth_path, root),
                seeds,
                mean,
                std,
            });
        }
        let fold_means: Vec<MetricRow> = folds.iter().map(|f| f.mean).collect();
        let (mean, _) = MetricRow::mean_std(&fold_means);
        let (_, std) = MetricRow::mean_std(&all_rows);
        models.push(ModelReport {
            name: name.clone(),
            label,
            parameter_count,
            folds,
            mean,
            std,
        });
    }

    let find = |d: Distiller| {
        kinds
            .iter()
            .position(|(k, dist)| matches!(k, RunKind::Student { .. }) && *dist == d)
    };
    let paired = match (find(Distiller::Scratch), find(Distiller::Sckd)) {
        (Some(a), Some(b)) => Some(PairedComparison {
            scratch: models[a].name.clone(),
            sckd: models[b].name.clone(),
            subjects: models[a]
                .folds
                .iter()
                .zip(&models[b].folds)
                .map(|(fa, fb)| PairedSubject {
                    subject: fa.subject,
                    scratch_rmse: fa.mean.rmse,
                    sckd_rmse: fb.mean.rmse,
                    delta: fb.mean.rmse - fa.mean.rmse,
                })
                .collect(),
        }),
        _ => None,
    };

    Ok(MetricsReport {
        window: dataset.window,
        subjects,
        models,
        paired,
    })
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// Markdown tables: model summary, per-subject RMSE and the paired comparison.
pub fn render_markdown(report: &MetricsReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# LOSO evaluation (window {})\n", report.window);
    md.push_str("RMSE and MAE in 1e-2 normalized force, r x100, ECE in percent, BW columns in percent of body weight.\n\n");
    md.push_str("| Model | Run | Params | RMSE | MAE | r | r (per window) | ECE | BW RMSE | BW MAE |\n");
    md.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for m in &report.models {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            m.name,
            m.label,
            m.parameter_count,
            pm(m.mean.rmse, m.std.rmse),
            pm(m.mean.mae, m.std.mae),
            pm(m.mean.r, m.std.r),
            pm(m.mean.r_window, m.std.r_window),
            pm(m.mean.ece_avg, m.std.ece_avg),
            pm(m.mean.bw_rmse, m.std.bw_rmse),
            pm(m.mean.bw_mae, m.std.bw_mae),
        );
    }

    md.push_str("\n## RMSE per held-out subject\n\n| Subject |");
    for m in &report.models {
        let _ = write!(md, " {} |", m.name);
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(report.models.len()));
    md.push('\n');
    let by_subject: BTreeMap<u32, Vec<String>> = report
        .subjects
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let cells = report
                .models
                .iter()
                .map(|m| pm(m.folds[i].mean.rmse, m.folds[i].std.rmse))
                .collect();
            (s, cells)
        })
        .collect();
    for (s, cells) in &by_subject {
        let _ = writeln!(md, "| {s} | {} |", cells.join(" | "));
    }

    if let Some(p) = &report.paired {
        let _ = writeln!(md, "\n## Paired comparison: {} vs {}\n", p.scratch, p.sckd);
        md.push_str("| Subject | Scratch RMSE | SCKD RMSE | Delta |\n|---|---:|---:|---:|\n");
        for s in &p.subjects {
            let _ = writeln!(
                md,
                "| {} | {:.3} | {:.3} | {:+.3} |",
                s.subject, s.scratch_rmse, s.sckd_rmse, s.delta
            );
        }
    }
    md
}

/// Writes `report.json` and `report.md` into `root`.
pub fn write_report(report: &MetricsReport, root: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    let path = root.join(REPORT_JSON);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = root.join(REPORT_MD);
    fs::write(&path, render_markdown(report)).map_err(|e| Error::io(&path, e))
}
