//! Cross-domain experiments: train one classifier per feature method on
//! one scenario and measure it on others.

pub mod error;
pub mod experiment;
pub mod report;

pub use error::{Error, Result};
pub use experiment::{
    confusion, mean_accuracy_over_seeds, resolve_scenario, run_experiment, scalability_sweep,
    timing_report, CellResult, ExperimentSpec, MethodTiming, ResultTable,
};
pub use report::{write_accuracy_csv, write_confusion_csvs, write_results, write_timing_csv};
