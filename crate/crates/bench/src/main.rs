use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use turtlekv::{Config, Store};
use turtlekv_bench::report::{self, ReportError};
use turtlekv_bench::sweep::{self, chi_sweep, SweepOptions};
use turtlekv_bench::workload::{run_workload, KeyDist, WorkloadName, WorkloadSpec};

#[derive(Parser)]
#[command(name = "bench", about = "YCSB-style workloads against a turtlekv store", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Load at each checkpoint distance, retune to 1, then measure reads.
    ChiSweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Zipfian,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value = "bench-data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    records: u64,
    #[arg(long, default_value_t = 128)]
    value_bytes: usize,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Page cache budget; defaults to a third of the loaded data.
    #[arg(long)]
    cache_bytes: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Dist::Zipfian)]
    distribution: Dist,
    /// fsync log blocks, pages and manifest records.
    #[arg(long)]
    sync: bool,
    /// Log flush period in milliseconds; 0 flushes only on demand.
    #[arg(long, default_value_t = 1)]
    wal_poll_ms: u64,
    #[arg(long, default_value_t = 64 << 10)]
    leaf_bytes: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "load")]
    workload: String,
    #[arg(long, default_value_t = 1)]
    chi: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    chis: Vec<usize>,
    /// Rows whose pending batches would exceed this many bytes are reported as capped.
    #[arg(long, default_value_t = 1 << 30)]
    memory_limit: usize,
    #[arg(long, default_value_t = 3)]
    read_repeats: usize,
    #[arg(long, default_value_t = 0)]
    scan_ops: u64,
}

enum Failure {
    Usage(String),
    Store(String),
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Empty => Failure::Usage(e.to_string()),
            e => Failure::Store(e.to_string()),
        }
    }
}

impl From<turtlekv::Error> for Failure {
    fn from(e: turtlekv::Error) -> Self {
        match e {
            turtlekv::Error::InvalidArgument(m) | turtlekv::Error::InvalidParameter(m) => Failure::Usage(m),
            e => Failure::Store(e.to_string()),
        }
    }
}

fn spec_and_config(c: &Common, name: WorkloadName, chi: usize) -> Result<(WorkloadSpec, Config), Failure> {
    let mut spec = WorkloadSpec::ycsb(name, c.records, c.ops, c.value_bytes, c.seed);
    spec.threads = c.threads;
    spec.distribution = match c.distribution {
        Dist::Uniform => KeyDist::Uniform,
        Dist::Zipfian => KeyDist::Zipfian,
    };
    spec.validate().map_err(Failure::Usage)?;
    let data_bytes = c.records as usize * (c.value_bytes + 23);
    let cfg = Config {
        chi,
        leaf_page_bytes: c.leaf_bytes,
        memory_budget_bytes: c.cache_bytes.unwrap_or((data_bytes / 3).max(1 << 20)),
        sync: c.sync,
        wal_poll_ms: c.wal_poll_ms,
        worker_threads: c.threads,
        ..Config::default()
    };
    cfg.validate()?;
    Ok((spec, cfg))
}

fn emit(csv: Option<&PathBuf>, write: impl FnOnce(File) -> Result<(), ReportError>) -> Result<(), Failure> {
    if let Some(path) = csv {
        let f = File::create(path).map_err(|e| Failure::Store(format!("{}: {e}", path.display())))?;
        write(f)?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let name: WorkloadName = args.workload.parse().map_err(Failure::Usage)?;
    let (spec, cfg) = spec_and_config(&args.common, name, args.chi)?;
    if args.common.data_dir.exists() {
        std::fs::remove_dir_all(&args.common.data_dir).map_err(|e| Failure::Store(e.to_string()))?;
    }
    let store = Store::open(&args.common.data_dir, cfg)?;
    let outcome = run_workload(&store, &spec);
    print!("{}", report::table(&outcome.rows)?);
    emit(args.common.csv.as_ref(), |f| report::write_csv(&outcome.rows, f))?;
    match outcome.error {
        Some(e) => Err(Failure::Store(format!("run aborted, partial rows marked invalid: {e}"))),
        None => {
            store.close()?;
            Ok(())
        }
    }
}

fn sweep_cmd(args: SweepArgs) -> Result<(), Failure> {
    let (spec, cfg) = spec_and_config(&args.common, WorkloadName::Load, 1)?;
    let opts = SweepOptions {
        memory_limit_bytes: args.memory_limit,
        read_repeats: args.read_repeats,
        scan_ops: args.scan_ops,
        keep_data: false,
    };
    let rows = chi_sweep(&args.common.data_dir, &args.chis, &spec, &cfg, &opts)?;
    println!(
        "{:>5} {:>7} {:>9} {:>13} {:>11} {:>11} {:>11} {:>10} {:>12} {:>10}",
        "chi", "capped", "write_amp", "pages_per_key", "put_p50_us", "put_p99_us", "peak_mem_mb", "retune_ms", "c_ops_sec", "space_amp"
    );
    for r in &rows {
        println!(
            "{:>5} {:>7} {:>9.3} {:>13.4} {:>11.2} {:>11.2} {:>11.2} {:>10.1} {:>12.0} {:>10.3}",
            r.chi, r.capped, r.write_amp, r.pages_per_key, r.put_p50_us, r.put_p99_us, r.peak_mem_mb, r.retune_ms, r.c_ops_sec, r.space_amp
        );
    }
    emit(args.common.csv.as_ref(), |f| sweep::write_csv(&rows, f))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::ChiSweep(a)) => sweep_cmd(a),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Store(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
