//! Metrics and report generation.

mod curve;
mod metrics;
mod report;
mod stability;
mod strata;

pub use curve::{crossover, learning_curve, mean_ci, LearningCurve};
pub use metrics::{metrics, r2_score, Metrics};
pub use report::{
    metrics_table_csv, read_manifest, Manifest, ManifestEntry, ReportWriter, MANIFEST_FILE,
    METRIC_COLUMNS,
};
pub use stability::{
    power_error_grid, training_stability_report, HeatGrid, RewardWindow, StabilityReport,
};
pub use strata::{bin_of, default_soh_bins, soh_stratified_eval, BinResult, SohBin, SohStratified};
