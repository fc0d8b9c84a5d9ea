//! Experiment harness: dataset ingestion, experiment specs, seeded runs,
//! sweeps, tables and figures.

pub mod error;
pub mod experiment;
pub mod ingest;
pub mod plots;
pub mod report;
pub mod spec;
pub mod sweep;

pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_experiment_on, ExperimentResult, RunOptions, Stat};
pub use spec::ExperimentSpec;
pub use sweep::{run_sweep, SweepAxis, SweepSpec};
