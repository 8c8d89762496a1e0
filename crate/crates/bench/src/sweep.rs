//! Checkpoint-distance sweeps: load at each χ, retune to χ = 1, then measure reads.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use turtlekv::{Config, Error, Store};

use crate::metrics::RunMetrics;
use crate::workload::{run_phase, WorkloadName, WorkloadSpec};

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Rows whose χ batches would not fit in this many bytes are reported as capped.
    pub memory_limit_bytes: usize,
    /// Workload C runs this many times per row; the median throughput is reported.
    pub read_repeats: usize,
    /// Workload E operations per row; 0 skips it.
    pub scan_ops: u64,
    pub keep_data: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { memory_limit_bytes: 1 << 30, read_repeats: 3, scan_ops: 0, keep_data: false }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepRow {
    pub chi: usize,
    pub capped: bool,
    pub write_amp: f64,
    pub pages_per_key: f64,
    pub page_bytes_per_key: f64,
    pub load_ops_sec: f64,
    pub put_p50_us: f64,
    pub put_p99_us: f64,
    pub peak_mem_mb: f64,
    pub retune_ms: f64,
    pub c_ops_sec: f64,
    pub e_ops_sec: f64,
    pub space_amp: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn phase(store: &Store, spec: &WorkloadSpec) -> Result<RunMetrics, Error> {
    match run_phase(store, spec, None) {
        (m, None) => Ok(m),
        (_, Some(e)) => Err(e),
    }
}

/// One row per χ. `chis` must be ascending and positive. Every uncapped store stays open until
/// the read phases finish.
pub fn chi_sweep(
    root: &Path,
    chis: &[usize],
    spec: &WorkloadSpec,
    cfg: &Config,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>, Error> {
    if chis.is_empty() || chis[0] == 0 || chis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("chi list must be ascending and start at 1 or more".into()));
    }
    spec.validate().map_err(Error::InvalidArgument)?;
    let mut rows = Vec::new();
    let mut open = Vec::new();
    for &chi in chis {
        if chi.saturating_mul(cfg.leaf_payload_bytes()) > opts.memory_limit_bytes {
            rows.push(SweepRow { chi, capped: true, ..Default::default() });
            continue;
        }
        let dir = root.join(format!("chi-{chi}"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        let store = Store::open(&dir, Config { chi, ..cfg.clone() })?;
        let load = phase(&store, &spec.with_name(WorkloadName::Load))?;
        let t = Instant::now();
        store.set_checkpoint_distance(1)?;
        store.flush()?;
        let retune_ms = t.elapsed().as_secs_f64() * 1e3;
        let total = store.counters().snapshot();
        let keys = total.keys_in.max(1) as f64;
        rows.push(SweepRow {
            chi,
            capped: false,
            write_amp: total.write_amplification().unwrap_or(0.0),
            pages_per_key: total.pages_written() as f64 / keys,
            page_bytes_per_key: total.pool_bytes_written.iter().sum::<u64>() as f64 / keys,
            load_ops_sec: load.ops_sec,
            put_p50_us: load.p50_us,
            put_p99_us: load.p99_us,
            peak_mem_mb: total.peak_memory_bytes as f64 / (1 << 20) as f64,
            retune_ms,
            space_amp: store.space_amplification()?.unwrap_or(0.0),
            ..Default::default()
        });
        open.push((rows.len() - 1, store, dir));
    }
    // Rounds visit every store in turn so drift in machine speed hits all rows alike.
    let c_spec = spec.with_name(WorkloadName::C);
    let mut samples = vec![Vec::new(); rows.len()];
    for _ in 0..opts.read_repeats.max(1) {
        for (i, store, _) in &open {
            samples[*i].push(phase(store, &c_spec)?.ops_sec);
        }
    }
    for (i, store, dir) in open {
        rows[i].c_ops_sec = median(std::mem::take(&mut samples[i]));
        if opts.scan_ops > 0 {
            let e = WorkloadSpec { operation_count: opts.scan_ops, ..spec.with_name(WorkloadName::E) };
            rows[i].e_ops_sec = phase(&store, &e)?.ops_sec;
        }
        store.close()?;
        if !opts.keep_data {
            std::fs::remove_dir_all(&dir)?;
        }
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<(), crate::report::ReportError> {
    if rows.is_empty() {
        return Err(crate::report::ReportError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
