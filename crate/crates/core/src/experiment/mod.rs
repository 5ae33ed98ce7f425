//! The regression protocol: ingest a table, split it, normalize with
//! training statistics, train every method under several seeds and report
//! mean and standard deviation of test MSE and satisfaction ratio.

pub mod data;
pub mod normalize;
pub mod report;
pub mod runner;
pub mod synthetic;

pub use data::{load_and_split, read_csv, split_dataset, split_indices, Dataset, DatasetSpec, RawSplits};
pub use normalize::{prepare, Normalizer, Prepared};
pub use report::{emit_report, format_cell, ReportFormat};
pub use runner::{
    default_bounds, materialize, run_experiment, run_prepared, Aggregate, DatasetSource,
    ExperimentConfig, ExperimentRun, RunRecord, RunReport, Stat,
};
pub use synthetic::{synthetic_constraints, synthetic_dataset};
