//! Point metrics, calibration, LOSO reports and latency measurement.

mod latency;
mod metrics;
mod report;

pub use latency::{latency_bench, latency_bench_network, Latency};
pub use metrics::{
    calibration_error, ece, mean_std, per_window_r, point_metrics, point_metrics_3d, Calibration,
    PointMetrics,
};
pub use report::{
    fold_dir, loso_evaluate, metric_row, read_predictions, render_markdown, write_report,
    FoldEntry, MetricRow, MetricsReport, ModelReport, PairedComparison, PairedSubject, SeedEntry,
    PREDICTIONS_DIR, REPORT_JSON, REPORT_MD,
};
