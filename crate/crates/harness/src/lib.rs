//! Experiment orchestration and command-line front end for the `tamd-core`
//! estimators: declarative specs, seeded replication sweeps, result files.

pub mod builtin;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod runner;
pub mod spec;
pub mod summary;

pub use error::{HarnessError, Result};
pub use runner::{execute, run_experiment, RunRecord};
pub use spec::{CellId, ExperimentSpec, Method};
