//! Datasets, metrics, cross-validated tuning, learning curves and reports.

pub mod arms;
pub mod curve;
pub mod cv;
pub mod dataset;
pub mod experiment;
pub mod metrics;

pub use arms::{fine_tune_config, Arm, ArmKind};
pub use curve::{make_learning_curve_splits, CurveSplit, LearningCurvePlan};
pub use cv::{
    derive_seed, kfold_grid_search, stratified_folds, CvRow, FoldOutcome, FoldTask, GridSearchResult, GridSpec,
    PointSummary,
};
pub use dataset::{load_csv_dataset, Dataset};
pub use experiment::{
    plan_from_manifest, run_experiment, strip_timings, write_report, Aggregate, ArmReport, Environment,
    Experiment, RepetitionReport, Report, TuningReport, REPORT_FILE, SUMMARY_FILE,
};
pub use metrics::{macro_f1, MetricsReport};
