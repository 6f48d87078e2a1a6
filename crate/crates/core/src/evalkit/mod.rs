//! Trajectory and image metrics, and the end-to-end experiment harness.

mod experiment;
mod metrics;

pub use experiment::{run_experiment, ExperimentOutput, MetricReport, Timing};
pub use metrics::*;
