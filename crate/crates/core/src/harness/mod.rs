//! Configuration, convergence control and experiment orchestration.

pub mod cache;
pub mod config;
pub mod converge;
pub mod pipeline;
pub mod report;
pub mod search;

pub use cache::Cache;
pub use config::{ExperimentConfig, SweepSpec};
pub use converge::{EarlyStopping, StopDecision};
pub use pipeline::{prepare_data, run_sweep, PreparedData, RunSpec};
pub use search::{hyperparameter_search, SearchGrid};
