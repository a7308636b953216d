//! Experiment runner for the manifold ReLU approximation library: grid
//! sweeps of the explicit construction, sample-size sweeps of the
//! least-squares estimator, ambient-dimension studies, and reporting.

pub mod config;
pub mod experiments;
pub mod invariants;
pub mod report;

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use experiments::run;
pub use report::{fit_slope, ExperimentReport, SlopeFit};
