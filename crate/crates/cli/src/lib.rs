//! Experiment harness for the PSPO and 2SPSA optimizers: configuration,
//! batch experiments, and CSV output.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, OptimizerChoice, Overrides, ProblemKind};
pub use error::{CliError, CliResult};
pub use experiments::{
    run_calibrate, run_compare, run_m_sweep, run_noise_probe, run_one, sweep_means, Calibration,
    CompareOutcome, NoiseProbeRow, Problem, RunResult, Summary, SweepRow,
};
