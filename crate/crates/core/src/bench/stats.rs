//! Latency statistics: exact mean plus nearest-rank percentiles.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: u64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
    /// True when there were no samples; every figure is zero.
    pub empty: bool,
}

impl LatencyStats {
    pub fn zero() -> Self {
        Self { samples: 0, mean_ns: 0.0, p50_ns: 0, p99_ns: 0, max_ns: 0, empty: true }
    }
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.
fn nearest_rank(sorted: &[u64], percentile: u32) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as u64;
    let rank = (percentile as u64 * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

pub fn compute_stats(latencies_ns: &[u64]) -> LatencyStats {
    if latencies_ns.is_empty() {
        return LatencyStats::zero();
    }
    let mut sorted = latencies_ns.to_vec();
    sorted.sort_unstable();
    let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
    LatencyStats {
        samples: sorted.len() as u64,
        mean_ns: sum as f64 / sorted.len() as f64,
        p50_ns: nearest_rank(&sorted, 50),
        p99_ns: nearest_rank(&sorted, 99),
        max_ns: *sorted.last().unwrap(),
        empty: false,
    }
}
