//! Experiment runner: plans, resumable stage execution and reports.

pub mod error;
pub mod plan;
pub mod runner;
pub mod store;

pub use error::{CliError, Result};
pub use plan::{DigitSpec, ExperimentPlan, Preset};
pub use runner::{
    run_compare, run_envelope, run_gen, run_learning_sweep, run_oracle, run_prequential, CompareInput,
    ComparisonReport, EnvelopeFile, GenKind,
};
