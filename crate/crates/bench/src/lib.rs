//! Workload harness for the turtlekv store.

pub mod metrics;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod workload;
pub mod zipf;

pub use metrics::RunMetrics;
pub use sweep::{chi_sweep, SweepOptions, SweepRow};
pub use workload::{run_workload, KeyDist, Op, OpStream, WorkloadName, WorkloadSpec};
