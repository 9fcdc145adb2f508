//! Cross-validation harness: fold plans, experiment configs, the runner
//! and report output.

pub mod config;
pub mod folds;
pub mod reference;
pub mod report;
pub mod run;

pub use config::{DataSource, ExperimentConfig, ExperimentId, ModelKind, ModelSpec, Seeds, SweepConfig, TrainSpec};
pub use folds::{compute_crr, make_folds, mean_and_se, Fold, FoldPlan, Split, SubjectAssignment, N_FOLDS, TRIALS_PER_SUBJECT};
pub use reference::{published_crr, PublishedCrr};
pub use report::{loss_curves_csv, parse_reports, read_reports, reports_json, summary_csv, write_report_files, ReportFiles};
pub use run::{
    derive_seed, fold_checkpoint, load_dataset, preprocess, prepare_subsamples, run_experiment, run_experiment_with,
    run_sweep, worker_threads, CrrReport, Dataset, FilterSummary, FoldResult, RunOptions, SplitSummary,
};
