//! Command-line front end: dataset synthesis, training, distillation,
//! evaluation, latency benchmarks and figures.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 when a
//! pipeline stage fails at run time.

mod config;
mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{apply_override, resolve};
pub use plot::{estimation_figure, heatmap_grid, sensitivity_figure, Figure, HeatmapRow};

use crate::datagen::{build_dataset, load_dataset, save_dataset, DatasetConfig, WindowedDataset, TARGET_RATE_HZ};
use crate::error::{Error, Result};
use crate::eval::{latency_bench_network, loso_evaluate, read_predictions, write_report, Latency, MetricsReport, REPORT_JSON};
use crate::losses::{selected_correlation_maps, sp_map, tap_feature, tap_flat, KernelMode, TapId};
use crate::models::{forward_with_taps, load_checkpoint};
use crate::training::{run_label, seeded_run, Fold, FoldData, RunKind, TrainConfig, RESOLVED_CONFIG_FILE};

pub const RUNS_DIR_ENV: &str = "SCKD_RUNS_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sckd", version, about = "Insole-to-GRF teachers and selective correlation distillation")]
pub struct Cli {
    /// More log output (repeatable); RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic windowed dataset.
    Synth(SynthArgs),
    /// Train teacher networks (three seeds per run by default).
    TrainTeacher(TrainArgs),
    /// Train students against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Evaluate a LOSO experiment directory and write report.json / report.md.
    Eval(EvalArgs),
    /// Batch-1 inference latency of checkpoints.
    Bench(BenchArgs),
    /// Render figures as SVG and PNG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON file layered over the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set distill.sckd.lambda2=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; defaults to a folder under $SCKD_RUNS_DIR (or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<u32>,
    /// Treadmill speeds in m/s, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub speeds: Option<Vec<f64>>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Session length in seconds, warm-up included.
    #[arg(long)]
    pub session_seconds: Option<f64>,
    /// Start from eight subjects at four speeds instead of the desk defaults.
    #[arg(long)]
    pub paper_sized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 30 epochs, batch 32, quarter-width encoders.
    Desk,
    /// 200 epochs, batch 128, reference widths.
    Paper,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Held-out subject (overrides `held_out`).
    #[arg(long, conflicts_with = "loso")]
    pub fold: Option<u32>,
    /// Train one run per held-out subject under `<out>/fold_<s>/<name>/`.
    #[arg(long)]
    pub loso: bool,
    /// Run folder name inside each fold directory (LOSO only); defaults to the run label.
    #[arg(long, requires = "loso")]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Teacher checkpoint; `{fold}` is replaced by the held-out subject id.
    #[arg(long)]
    pub teacher: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment directory holding `fold_<s>/<model>/` runs.
    #[arg(long)]
    pub runs: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time, optionally labelled `name=path` (repeatable).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Estimation,
    Corrmap,
    Sensitivity,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluated experiment directory (estimation).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Model folder name (estimation).
    #[arg(long)]
    pub model: Option<String>,
    /// Held-out subject (estimation, corrmap).
    #[arg(long)]
    pub subject: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test window to draw (estimation).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Dataset directory (corrmap).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `label=checkpoint` pairs, one row per model (corrmap, repeatable).
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
    /// Taps to render (corrmap).
    #[arg(long, value_delimiter = ',', default_value = "E2,Mid,D1")]
    pub taps: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub q: usize,
    #[arg(long, default_value_t = 0.4)]
    pub gamma: f64,
    /// Windows per map (corrmap).
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// JSON file `{"parameter", "metric", "points": [{"x", "y"}]}` (sensitivity).
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// `x=path/to/report.json` points, metric read from `--model` (sensitivity, repeatable).
    #[arg(long = "point")]
    pub points: Vec<String>,
    /// Swept parameter name (sensitivity with --point).
    #[arg(long, default_value = "lambda2")]
    pub parameter: String,
}

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.error.is_config_error() {
            EXIT_CONFIG
        } else {
            EXIT_RUNTIME
        }
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type CliResult<T> = std::result::Result<T, StageError>;

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn out_dir(out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| runs_root().join(default_name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::TrainTeacher(a) => train(&a, None),
        Command::Distill(a) => train(&a.train, Some(&a.teacher)),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let base = if a.paper_sized {
        DatasetConfig::paper_sized(a.window.unwrap_or(100))
    } else {
        DatasetConfig::desk()
    };
    let mut cfg: DatasetConfig = resolve(&base, a.cfg.config.as_deref(), &a.cfg.overrides).stage("config")?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.subjects {
        cfg.subjects = v;
    }
    if let Some(v) = &a.speeds {
        cfg.speeds = v.clone();
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.session_seconds {
        cfg.session_seconds = v;
    }
    cfg.validate().stage("config")?;
    let out = out_dir(&a.cfg.out, "data");
    write_json(&out.join(RESOLVED_CONFIG_FILE), &cfg).stage("synth")?;
    let ds = build_dataset(&cfg).stage("synth")?;
    let manifest = save_dataset(&ds, Some(&cfg), &out).stage("synth")?;
    log::info!(
        "wrote {} windows of {} subjects to {}",
        manifest.splits.iter().map(|s| s.count).sum::<usize>(),
        cfg.subjects,
        out.display()
    );
    Ok(())
}

fn load_data(dir: &Path) -> CliResult<WindowedDataset> {
    match load_dataset(dir) {
        Err(Error::MissingArtifact(p)) => Err(StageError {
            stage: "load-dataset",
            error: Error::Config(format!("no dataset at {} (run `sckd synth` first)", p.display())),
        }),
        other => other.stage("load-dataset"),
    }
}

fn train(a: &TrainArgs, teacher: Option<&String>) -> CliResult<()> {
    let base = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::default(),
    };
    let mut cfg: TrainConfig = resolve(&base, a.cfg.config.as_deref(), &a.cfg.overrides).stage("config")?;
    if let Some(f) = a.fold {
        cfg.held_out = Some(f);
    }
    cfg.validate().stage("config")?;
    let stage = if teacher.is_some() { "distill" } else { "train-teacher" };
    let ds = load_data(&a.data)?;

    let kind_for = |subject: u32| -> RunKind {
        match teacher {
            None => RunKind::Teacher,
            Some(t) => RunKind::Student {
                teacher: PathBuf::from(t.replace("{fold}", &subject.to_string())),
            },
        }
    };
    if a.loso {
        let root = out_dir(&a.cfg.out, "loso");
        let name = a
            .name
            .clone()
            .unwrap_or_else(|| run_label(&cfg, &kind_for(0)));
        for subject in ds.subject_ids() {
            let fold_cfg = TrainConfig {
                held_out: Some(subject),
                validation: None,
                ..cfg.clone()
            };
            let dir = crate::eval::fold_dir(&root, subject).join(&name);
            log::info!("fold {subject}: {}", dir.display());
            let agg = seeded_run(&fold_cfg, &ds, &kind_for(subject), &dir).stage(stage)?;
            log::info!("fold {subject}: val RMSE {:.3} ± {:.3}", agg.mean.val_rmse, agg.std.val_rmse);
        }
    } else {
        let held = cfg.held_out.unwrap_or_else(|| ds.subject_ids().first().copied().unwrap_or(0));
        let kind = kind_for(held);
        let dir = out_dir(&a.cfg.out, &run_label(&cfg, &kind));
        let agg = seeded_run(&cfg, &ds, &kind, &dir).stage(stage)?;
        log::info!(
            "{}: val RMSE {:.3} ± {:.3}, test RMSE {:.3} ± {:.3} -> {}",
            agg.label,
            agg.mean.val_rmse,
            agg.std.val_rmse,
            agg.mean.test_rmse,
            agg.std.test_rmse,
            dir.display()
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let ds = load_data(&a.data)?;
    write_json(
        &a.runs.join("eval.resolved.json"),
        &json!({ "command": "eval", "data": a.data, "runs": a.runs }),
    )
    .stage("eval")?;
    let report = loso_evaluate(&a.runs, &ds).stage("eval")?;
    write_report(&report, &a.runs).stage("eval")?;
    for m in &report.models {
        log::info!("{}: RMSE {:.3} ± {:.3}, r {:.2}", m.name, m.mean.rmse, m.std.rmse, m.mean.r);
    }
    Ok(())
}

fn labelled(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let p = PathBuf::from(spec);
            (p.display().to_string(), p)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchEntry {
    name: String,
    checkpoint: PathBuf,
    parameter_count: usize,
    latency: Latency,
}

fn bench(a: &BenchArgs) -> CliResult<()> {
    let out = out_dir(&a.out, "bench");
    let entries: Vec<(String, PathBuf)> = a.checkpoints.iter().map(|c| labelled(c)).collect();
    write_json(
        &out.join(RESOLVED_CONFIG_FILE),
        &json!({ "command": "bench", "samples": a.samples, "batch": 1, "checkpoints": entries }),
    )
    .stage("bench")?;
    let mut results = Vec::new();
    for (name, path) in entries {
        let (net, _) = load_checkpoint(&path).stage("bench")?;
        let latency = latency_bench_network(&net, a.samples, 2).stage("bench")?;
        log::info!("{name}: {:.3} ms/sample over {} samples", latency.avg_ms, latency.samples);
        results.push(BenchEntry {
            name,
            checkpoint: path,
            parameter_count: crate::nn::Module::parameter_count(&net),
            latency,
        });
    }
    write_json(&out.join("bench.json"), &results).stage("bench")
}

#[derive(Debug, Deserialize)]
struct Sweep {
    parameter: String,
    #[serde(default = "default_metric")]
    metric: String,
    points: Vec<SweepPoint>,
}

#[derive(Debug, Deserialize)]
struct SweepPoint {
    x: f64,
    y: f64,
}

fn default_metric() -> String {
    "RMSE".into()
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| StageError {
        stage: "plot",
        error: Error::Config(format!("--{flag} is required for this plot kind")),
    })
}

fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn plot_cmd(a: &PlotArgs) -> CliResult<()> {
    let out = out_dir(&a.out, "plots");
    write_json(
        &out.join(RESOLVED_CONFIG_FILE),
        &json!({
            "command": "plot", "kind": a.kind, "runs": a.runs, "model": a.model,
            "subject": a.subject, "seed": a.seed, "index": a.index, "data": a.data,
            "checkpoints": a.checkpoints, "taps": a.taps, "q": a.q, "gamma": a.gamma,
            "batch": a.batch, "sweep": a.sweep, "points": a.points, "parameter": a.parameter,
        }),
    )
    .stage("plot")?;
    let files = match a.kind {
        PlotKind::Estimation => plot_estimation(a, &out)?,
        PlotKind::Corrmap => plot_corrmap(a, &out)?,
        PlotKind::Sensitivity => plot_sensitivity(a, &out)?,
    };
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn plot_estimation(a: &PlotArgs, out: &Path) -> CliResult<Vec<PathBuf>> {
    let runs = need(&a.runs, "runs")?;
    let report = read_report(&runs.join(REPORT_JSON)).stage("plot")?;
    let model = match &a.model {
        Some(m) => report.models.iter().find(|x| &x.name == m),
        None => report.models.last(),
    }
    .ok_or_else(|| StageError {
        stage: "plot",
        error: Error::Config(format!("model {:?} not in report", a.model)),
    })?;
    let subject = a.subject.unwrap_or(report.subjects[0]);
    let fold = model.folds.iter().find(|f| f.subject == subject).ok_or(StageError {
        stage: "plot",
        error: Error::UnknownSubject(subject),
    })?;
    let entry = match a.seed {
        Some(s) => fold.seeds.iter().find(|e| e.seed == s),
        None => fold.seeds.first(),
    }
    .ok_or_else(|| StageError {
        stage: "plot",
        error: Error::Config(format!("seed {:?} not evaluated", a.seed)),
    })?;
    let pred = read_predictions(&runs.join(&entry.predictions), report.window).stage("plot")?;
    let truth = read_predictions(&runs.join(&fold.truth), report.window).stage("plot")?;
    if a.index >= pred.dim().0 {
        return Err(StageError {
            stage: "plot",
            error: Error::Config(format!("window index {} out of range ({})", a.index, pred.dim().0)),
        });
    }
    let p = pred.index_axis(Axis(0), a.index);
    let t = truth.index_axis(Axis(0), a.index);
    let fig = estimation_figure(
        &format!("{} — subject {subject}, seed {}, window {}", model.name, entry.seed, a.index),
        [t.row(0), t.row(1)],
        [p.row(0), p.row(1)],
        TARGET_RATE_HZ,
    );
    fig.save(&out.join(format!("estimation_{}_s{subject}_w{}", model.name, a.index)))
        .stage("plot")
}

fn plot_corrmap(a: &PlotArgs, out: &Path) -> CliResult<Vec<PathBuf>> {
    let data = need(&a.data, "data")?;
    if a.checkpoints.is_empty() {
        return Err(StageError {
            stage: "plot",
            error: Error::Config("--checkpoint label=path is required for corrmap".into()),
        });
    }
    if a.batch < 2 || a.q == 0 {
        return Err(StageError {
            stage: "plot",
            error: Error::Config("corrmap needs --batch >= 2 and --q >= 1".into()),
        });
    }
    let taps: Vec<TapId> = a.taps.iter().map(|t| t.parse()).collect::<Result<_>>().stage("config")?;
    let ds = load_data(data)?;
    let subject = a.subject.unwrap_or_else(|| ds.subject_ids()[0]);
    let fold = Fold::new(&ds, subject, None).stage("plot")?;
    let fd = FoldData::new(&ds, fold);
    let n = fd.test.len();
    if n < 2 {
        return Err(StageError {
            stage: "plot",
            error: Error::InvalidArgument(format!("subject {subject} has {n} windows")),
        });
    }
    let b = a.batch.min(n);
    let picks: Vec<_> = (0..b).map(|i| fd.test[i * n / b]).collect();
    let batch = fd.batch(&picks);

    let mut bundles = Vec::new();
    for spec in &a.checkpoints {
        let (label, path) = labelled(spec);
        let (net, _) = load_checkpoint(&path).stage("plot")?;
        if net.spec.window != ds.window {
            return Err(StageError {
                stage: "plot",
                error: Error::shape(ds.window, net.spec.window),
            });
        }
        bundles.push((label, forward_with_taps(&net, &batch.x).stage("plot")?));
    }
    let mut files = Vec::new();
    for tap in taps {
        let rows: Vec<HeatmapRow> = bundles
            .iter()
            .map(|(label, bundle)| {
                let f = tap_feature(bundle, tap);
                let mut maps: Vec<(String, ndarray::Array2<f64>)> =
                    selected_correlation_maps(&f, a.q, a.gamma, KernelMode::Exact)
                        .into_iter()
                        .map(|(k, g)| (format!("G k={k}"), g))
                        .collect();
                maps.push(("M".into(), sp_map(tap_flat(bundle, tap).view())));
                HeatmapRow { label: label.clone(), maps }
            })
            .collect();
        let fig = heatmap_grid(&format!("{tap} correlation maps, subject {subject}, {b} windows"), &rows);
        files.extend(fig.save(&out.join(format!("corrmap_{tap}"))).stage("plot")?);
    }
    Ok(files)
}

fn plot_sensitivity(a: &PlotArgs, out: &Path) -> CliResult<Vec<PathBuf>> {
    let sweep = if let Some(path) = &a.sweep {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))
            .stage("plot")?;
        serde_json::from_str::<Sweep>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            .stage("config")?
    } else if !a.points.is_empty() {
        let mut points = Vec::new();
        for p in &a.points {
            let (x, path) = p.split_once('=').ok_or_else(|| StageError {
                stage: "config",
                error: Error::Config(format!("--point '{p}' is not x=report.json")),
            })?;
            let x: f64 = x.parse().map_err(|_| StageError {
                stage: "config",
                error: Error::Config(format!("--point '{p}': '{x}' is not a number")),
            })?;
            let report = read_report(Path::new(path)).stage("plot")?;
            let model = match &a.model {
                Some(m) => report.models.iter().find(|r| &r.name == m),
                None => report.models.last(),
            }
            .ok_or_else(|| StageError {
                stage: "plot",
                error: Error::Config(format!("model {:?} not in {path}", a.model)),
            })?;
            points.push(SweepPoint { x, y: model.mean.rmse });
        }
        Sweep {
            parameter: a.parameter.clone(),
            metric: default_metric(),
            points,
        }
    } else {
        return Err(StageError {
            stage: "config",
            error: Error::Config("sensitivity needs --sweep or --point".into()),
        });
    };
    let pts: Vec<(f64, f64)> = sweep.points.iter().map(|p| (p.x, p.y)).collect();
    let fig = sensitivity_figure(&sweep.parameter, &sweep.metric, &pts);
    fig.save(&out.join(format!("sensitivity_{}", sweep.parameter.replace('.', "_"))))
        .stage("plot")
}

