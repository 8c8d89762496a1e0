//! Per-phase measurements.

use std::time::Duration;

use serde::Serialize;
use turtlekv::stats::{StatsSnapshot, MAX_POOLS};

use crate::workload::Op;

/// Per-driver latency samples, merged once the phase ends.
#[derive(Default)]
pub struct LatencyLog {
    nanos: Vec<u64>,
}

impl LatencyLog {
    pub fn record(&mut self, _op: &Op, d: Duration) {
        self.nanos.push(d.as_nanos() as u64);
    }

    pub fn len(&self) -> usize {
        self.nanos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nanos.is_empty()
    }
}

/// Nearest-rank percentile of sorted samples; 0 when empty.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub workload: String,
    pub chi: usize,
    pub threads: usize,
    pub ops: u64,
    pub ops_sec: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    /// Bytes written to pools, log and manifest over user bytes of this phase; 0 for read-only phases.
    pub write_amp: f64,
    pub space_amp: f64,
    pub peak_mem_mb: f64,
    pub pages_written: [u64; MAX_POOLS],
    pub wall_s: f64,
    pub valid: bool,
}

impl RunMetrics {
    pub fn from_logs(
        workload: &str,
        chi: usize,
        threads: usize,
        logs: &[LatencyLog],
        wall: Duration,
        delta: &StatsSnapshot,
    ) -> Self {
        let mut all: Vec<u64> = logs.iter().flat_map(|l| l.nanos.iter().copied()).collect();
        all.sort_unstable();
        let us = |p| percentile(&all, p) as f64 / 1000.0;
        let wall_s = wall.as_secs_f64();
        RunMetrics {
            workload: workload.to_string(),
            chi,
            threads,
            ops: all.len() as u64,
            ops_sec: if wall_s > 0.0 { all.len() as f64 / wall_s } else { 0.0 },
            p50_us: us(50.0),
            p95_us: us(95.0),
            p99_us: us(99.0),
            write_amp: delta.write_amplification().unwrap_or(0.0),
            space_amp: 0.0,
            peak_mem_mb: 0.0,
            pages_written: delta.pool_pages_written,
            wall_s,
            valid: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&v, 100.0), 100);
        assert_eq!(percentile(&v, 0.0), 1);
        assert_eq!(percentile(&[], 50.0), 0);
        assert_eq!(percentile(&[7], 95.0), 7);
    }

    #[test]
    fn merges_driver_logs() {
        let mut a = LatencyLog::default();
        let mut b = LatencyLog::default();
        for i in 0..50 {
            a.record(&Op::Read(0), Duration::from_micros(i));
            b.record(&Op::Read(0), Duration::from_micros(50 + i));
        }
        let delta = StatsSnapshot { user_bytes_in: 100, wal_bytes_written: 250, ..Default::default() };
        let m = RunMetrics::from_logs("a", 1, 2, &[a, b], Duration::from_secs(2), &delta);
        assert_eq!(m.ops, 100);
        assert_eq!(m.ops_sec, 50.0);
        assert_eq!(m.p50_us, 49.0);
        assert_eq!(m.write_amp, 2.5);
    }
}
