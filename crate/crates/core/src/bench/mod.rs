//! Workload generator and statistics reporter.

mod stats;
mod workload;

pub use stats::{compute_stats, LatencyStats};
pub use workload::{
    compare_paths, run_workload, BenchError, BenchReport, BenchTarget, DataFill, PathComparison,
    Pattern, ThreadReport, WorkloadSpec, MAX_BENCH_BLOCK,
};
