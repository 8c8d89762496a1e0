//! CSV and aligned-table output.

use std::io::Write;

use crate::metrics::RunMetrics;

pub const COLUMNS: [&str; 11] =
    ["workload", "chi", "threads", "ops_sec", "p50_us", "p95_us", "p99_us", "write_amp", "space_amp", "peak_mem_mb", "wall_s"];

/// Columns that depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 5] = ["ops_sec", "p50_us", "p95_us", "p99_us", "wall_s"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no rows to report")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn cells(m: &RunMetrics) -> [String; 11] {
    [
        m.workload.clone(),
        m.chi.to_string(),
        m.threads.to_string(),
        format!("{:.1}", m.ops_sec),
        format!("{:.2}", m.p50_us),
        format!("{:.2}", m.p95_us),
        format!("{:.2}", m.p99_us),
        format!("{:.3}", m.write_amp),
        format!("{:.3}", m.space_amp),
        format!("{:.2}", m.peak_mem_mb),
        format!("{:.3}", m.wall_s),
    ]
}

pub fn write_csv<W: Write>(rows: &[RunMetrics], out: W) -> Result<(), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for m in rows {
        w.write_record(cells(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn table(rows: &[RunMetrics]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let body: Vec<[String; 11]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> =
        (0..COLUMNS.len()).map(|i| body.iter().map(|r| r[i].len()).chain([COLUMNS[i].len()]).max().unwrap()).collect();
    let line = |cols: &mut dyn Iterator<Item = &str>| -> String {
        cols.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    let mut s = line(&mut COLUMNS.iter().copied());
    s.push('\n');
    for r in &body {
        s.push_str(&line(&mut r.iter().map(String::as_str)));
        s.push('\n');
    }
    Ok(s)
}
