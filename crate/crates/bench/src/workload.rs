//! YCSB-style workload specs, deterministic operation streams, and the driver loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use turtlekv::{Error, Store};

use crate::metrics::{LatencyLog, RunMetrics};
use crate::rng::{fnv64, XorShift64Star};
use crate::zipf::ScrambledZipfian;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WorkloadName {
    Load,
    A,
    B,
    C,
    E,
    F,
}

impl WorkloadName {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadName::Load => "load",
            WorkloadName::A => "a",
            WorkloadName::B => "b",
            WorkloadName::C => "c",
            WorkloadName::E => "e",
            WorkloadName::F => "f",
        }
    }
}

impl fmt::Display for WorkloadName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "load" => WorkloadName::Load,
            "a" => WorkloadName::A,
            "b" => WorkloadName::B,
            "c" => WorkloadName::C,
            "e" => WorkloadName::E,
            "f" => WorkloadName::F,
            other => return Err(format!("unknown workload {other:?}; expected load, a, b, c, e or f")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeyDist {
    Uniform,
    /// Scrambled Zipfian; the exponent is fixed at YCSB's 0.99.
    Zipfian,
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub name: WorkloadName,
    pub record_count: u64,
    pub value_bytes: usize,
    pub operation_count: u64,
    /// Point reads (A, B, C, F) or scans (E) as a fraction of operations.
    pub read_fraction: f64,
    pub scan_max_len: usize,
    pub distribution: KeyDist,
    pub seed: u64,
    pub threads: usize,
}

impl WorkloadSpec {
    /// The standard mix for `name`.
    pub fn ycsb(name: WorkloadName, record_count: u64, operation_count: u64, value_bytes: usize, seed: u64) -> Self {
        let read_fraction = match name {
            WorkloadName::Load => 0.0,
            WorkloadName::A | WorkloadName::F => 0.5,
            WorkloadName::B | WorkloadName::E => 0.95,
            WorkloadName::C => 1.0,
        };
        WorkloadSpec {
            name,
            record_count,
            value_bytes,
            operation_count,
            read_fraction,
            scan_max_len: 100,
            distribution: KeyDist::Zipfian,
            seed,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.record_count == 0 {
            return Err("record count must be positive".into());
        }
        if self.value_bytes == 0 {
            return Err("value size must be positive".into());
        }
        if self.threads == 0 {
            return Err("thread count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(format!("read fraction {} outside [0, 1]", self.read_fraction));
        }
        if self.name == WorkloadName::E && self.scan_max_len == 0 {
            return Err("scan length must be positive".into());
        }
        Ok(())
    }

    pub fn with_name(&self, name: WorkloadName) -> Self {
        WorkloadSpec { name, read_fraction: Self::ycsb(name, 1, 0, 1, 0).read_fraction, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Insert(u64),
    Read(u64),
    Update(u64),
    Scan(u64, usize),
    ReadModifyWrite(u64),
}

/// Key for record number `n`. Hashing scatters insertion order across the key space.
pub fn key_for(n: u64) -> Vec<u8> {
    format!("user{:019}", fnv64(n)).into_bytes()
}

/// Deterministic value bytes for (`n`, `version`).
pub fn value_for(n: u64, version: u64, len: usize) -> Vec<u8> {
    let mut r = XorShift64Star::new(n ^ version.rotate_left(32));
    let mut v = Vec::with_capacity(len + 8);
    while v.len() < len {
        v.extend_from_slice(&r.next_u64().to_le_bytes());
    }
    v.truncate(len);
    v
}

/// The operation stream of one driver thread. A pure function of (spec, thread).
pub struct OpStream {
    spec: WorkloadSpec,
    rng: XorShift64Star,
    zipf: Option<ScrambledZipfian>,
    thread: u64,
    issued: u64,
    quota: u64,
    inserts: u64,
}

impl OpStream {
    pub fn new(spec: &WorkloadSpec, thread: usize) -> Self {
        let threads = spec.threads as u64;
        let t = thread as u64;
        let total = if spec.name == WorkloadName::Load { spec.record_count } else { spec.operation_count };
        let quota = total / threads + u64::from(t < total % threads);
        OpStream {
            spec: spec.clone(),
            rng: XorShift64Star::new(spec.seed.wrapping_mul(0x9E37_79B9).wrapping_add(t)),
            zipf: (spec.distribution == KeyDist::Zipfian).then(|| ScrambledZipfian::new(spec.record_count)),
            thread: t,
            issued: 0,
            quota,
            inserts: 0,
        }
    }

    fn choose(&mut self) -> u64 {
        match &self.zipf {
            Some(z) => z.sample(&mut self.rng),
            None => self.rng.below(self.spec.record_count),
        }
    }
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.issued == self.quota {
            return None;
        }
        let i = self.issued;
        self.issued += 1;
        let threads = self.spec.threads as u64;
        if self.spec.name == WorkloadName::Load {
            return Some(Op::Insert(i * threads + self.thread));
        }
        let read = self.rng.next_f64() < self.spec.read_fraction;
        Some(match (self.spec.name, read) {
            (WorkloadName::E, true) => {
                let start = self.choose();
                Op::Scan(start, self.rng.range_inclusive(1, self.spec.scan_max_len as u64) as usize)
            }
            (WorkloadName::E, false) => {
                let n = self.spec.record_count + self.inserts * threads + self.thread;
                self.inserts += 1;
                Op::Insert(n)
            }
            (WorkloadName::F, false) => Op::ReadModifyWrite(self.choose()),
            (_, true) => Op::Read(self.choose()),
            (_, false) => Op::Update(self.choose()),
        })
    }
}

/// Record counts up to this get every read checked against an in-memory copy.
pub const VERIFY_THRESHOLD: u64 = 200_000;

/// In-memory copy of what a single-threaded run has written.
#[derive(Default)]
pub struct Shadow {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl Shadow {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Full-scan comparison.
    pub fn verify(&self, store: &Store) -> Result<(), Error> {
        let all = store.scan(b"", usize::MAX)?;
        let same = all.len() == self.map.len()
            && all.iter().zip(&self.map).all(|((k, v), (sk, sv))| k[..] == sk[..] && v[..] == sv[..]);
        if same {
            Ok(())
        } else {
            Err(Error::Corrupt(format!("store holds {} keys that differ from the {} written", all.len(), self.map.len())))
        }
    }
}

fn mismatch(what: &str, key: &[u8]) -> Error {
    Error::Corrupt(format!("{what} for {} disagrees with the shadow copy", String::from_utf8_lossy(key)))
}

struct Driver<'a> {
    store: &'a Store,
    spec: &'a WorkloadSpec,
    version: u64,
}

impl Driver<'_> {
    fn execute(&mut self, op: &Op, shadow: Option<&mut Shadow>) -> Result<(), Error> {
        self.version += 1;
        let version = self.version ^ self.spec.seed.rotate_left(17);
        let len = self.spec.value_bytes;
        match *op {
            Op::Insert(n) | Op::Update(n) => {
                let (k, v) = (key_for(n), value_for(n, version, len));
                self.store.put(&k, &v)?;
                if let Some(s) = shadow {
                    s.map.insert(k, v);
                }
            }
            Op::Read(n) => {
                let k = key_for(n);
                let got = self.store.get(&k)?;
                if let Some(s) = shadow {
                    if got.as_deref() != s.map.get(&k).map(Vec::as_slice) {
                        return Err(mismatch("read", &k));
                    }
                }
            }
            Op::Scan(n, len) => {
                let k = key_for(n);
                let got = self.store.scan(&k, len)?;
                if let Some(s) = shadow {
                    let want = s.map.range(k.clone()..).take(len);
                    if got.len() != want.clone().count()
                        || !got.iter().zip(want).all(|((a, av), (b, bv))| a[..] == b[..] && av[..] == bv[..])
                    {
                        return Err(mismatch("scan", &k));
                    }
                }
            }
            Op::ReadModifyWrite(n) => {
                let k = key_for(n);
                let old = self.store.get(&k)?;
                let mut v = value_for(n, version, len);
                if let Some(old) = &old {
                    v[0] ^= old.first().copied().unwrap_or(0);
                }
                self.store.put(&k, &v)?;
                if let Some(s) = shadow {
                    if old.as_deref() != s.map.get(&k).map(Vec::as_slice) {
                        return Err(mismatch("read-modify-write", &k));
                    }
                    s.map.insert(k, v);
                }
            }
        }
        Ok(())
    }
}

/// Runs one phase and measures it. With one thread and a shadow, every result is checked.
pub fn run_phase(store: &Store, spec: &WorkloadSpec, mut shadow: Option<&mut Shadow>) -> (RunMetrics, Option<Error>) {
    let before = store.counters().snapshot();
    let started = Instant::now();
    let (logs, error) = if spec.threads == 1 {
        let mut log = LatencyLog::default();
        let mut d = Driver { store, spec, version: 0 };
        let mut error = None;
        for op in OpStream::new(spec, 0) {
            let t = Instant::now();
            if let Err(e) = d.execute(&op, shadow.as_deref_mut()) {
                error = Some(e);
                break;
            }
            log.record(&op, t.elapsed());
        }
        (vec![log], error)
    } else {
        let results: Vec<(LatencyLog, Option<Error>)> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..spec.threads)
                .map(|t| {
                    s.spawn(move || {
                        let mut log = LatencyLog::default();
                        let mut d = Driver { store, spec, version: (t as u64) << 40 };
                        for op in OpStream::new(spec, t) {
                            let at = Instant::now();
                            if let Err(e) = d.execute(&op, None) {
                                return (log, Some(e));
                            }
                            log.record(&op, at.elapsed());
                        }
                        (log, None)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("driver thread panicked")).collect()
        });
        let mut error = None;
        let logs = results
            .into_iter()
            .map(|(l, e)| {
                error = error.take().or(e);
                l
            })
            .collect();
        (logs, error)
    };
    let wall = started.elapsed();
    let delta = store.counters().snapshot().since(&before);
    let mut m = RunMetrics::from_logs(spec.name.as_str(), store.checkpoint_distance(), spec.threads, &logs, wall, &delta);
    m.peak_mem_mb = store.counters().snapshot().peak_memory_bytes as f64 / (1 << 20) as f64;
    m.valid = error.is_none();
    (m, error)
}

/// Result of a full run: one row per phase executed, and the error that stopped it, if any.
pub struct Outcome {
    pub rows: Vec<RunMetrics>,
    pub error: Option<Error>,
}

/// Loads `spec.record_count` records, then runs the named workload (unless it is `load`).
/// Runs with one thread and at most [`VERIFY_THRESHOLD`] records are shadow-checked.
pub fn run_workload(store: &Store, spec: &WorkloadSpec) -> Outcome {
    let mut shadow = (spec.threads == 1 && spec.record_count <= VERIFY_THRESHOLD).then(Shadow::default);
    let mut rows = Vec::new();
    let load = spec.with_name(WorkloadName::Load);
    let (mut m, error) = run_phase(store, &load, shadow.as_mut());
    let finish = |m: &mut RunMetrics, error: Option<Error>, shadow: &Option<Shadow>| -> Option<Error> {
        let error = error.or_else(|| shadow.as_ref().and_then(|s| s.verify(store).err()));
        m.space_amp = store.space_amplification().ok().flatten().unwrap_or(0.0);
        m.valid = error.is_none();
        error
    };
    if let Some(e) = finish(&mut m, error, &shadow) {
        rows.push(m);
        return Outcome { rows, error: Some(e) };
    }
    rows.push(m);
    if spec.name != WorkloadName::Load {
        let (mut m, error) = run_phase(store, spec, shadow.as_mut());
        let error = finish(&mut m, error, &shadow);
        rows.push(m);
        if error.is_some() {
            return Outcome { rows, error };
        }
    }
    Outcome { rows, error: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(spec: &WorkloadSpec) -> BTreeMap<&'static str, u64> {
        let mut c = BTreeMap::new();
        for op in OpStream::new(spec, 0) {
            let k = match op {
                Op::Insert(_) => "insert",
                Op::Read(_) => "read",
                Op::Update(_) => "update",
                Op::Scan(..) => "scan",
                Op::ReadModifyWrite(_) => "rmw",
            };
            *c.entry(k).or_default() += 1;
        }
        c
    }

    #[test]
    fn mixes_follow_definitions() {
        let n = 100_000;
        let near = |got: u64, frac: f64| (got as f64 / n as f64 - frac).abs() < 0.01;
        let a = counts(&WorkloadSpec::ycsb(WorkloadName::A, 1000, n, 100, 1));
        assert!(near(a["read"], 0.5) && near(a["update"], 0.5));
        let b = counts(&WorkloadSpec::ycsb(WorkloadName::B, 1000, n, 100, 1));
        assert!(near(b["read"], 0.95) && near(b["update"], 0.05));
        let c = counts(&WorkloadSpec::ycsb(WorkloadName::C, 1000, n, 100, 1));
        assert_eq!(c["read"], n);
        let e = counts(&WorkloadSpec::ycsb(WorkloadName::E, 1000, n, 100, 1));
        assert!(near(e["scan"], 0.95) && near(e["insert"], 0.05));
        let f = counts(&WorkloadSpec::ycsb(WorkloadName::F, 1000, n, 100, 1));
        assert!(near(f["read"], 0.5) && near(f["rmw"], 0.5));
    }

    #[test]
    fn scan_lengths_cover_range_uniformly() {
        let spec = WorkloadSpec::ycsb(WorkloadName::E, 1000, 200_000, 100, 5);
        let mut hist = [0u64; 101];
        for op in OpStream::new(&spec, 0) {
            if let Op::Scan(_, len) = op {
                hist[len] += 1;
            }
        }
        assert_eq!(hist[0], 0);
        let total: u64 = hist.iter().sum();
        let expect = total as f64 / 100.0;
        for (len, &c) in hist.iter().enumerate().skip(1) {
            assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt(), "length {len}: {c} vs {expect}");
        }
    }

    #[test]
    fn streams_are_deterministic_and_partitioned() {
        let mut spec = WorkloadSpec::ycsb(WorkloadName::A, 500, 1000, 10, 9);
        let a: Vec<Op> = OpStream::new(&spec, 0).collect();
        let b: Vec<Op> = OpStream::new(&spec, 0).collect();
        assert_eq!(a, b);
        spec.threads = 3;
        let load = spec.with_name(WorkloadName::Load);
        let mut keys: Vec<u64> = (0..3)
            .flat_map(|t| OpStream::new(&load, t))
            .map(|op| if let Op::Insert(n) = op { n } else { panic!() })
            .collect();
        keys.sort();
        assert_eq!(keys, (0..500).collect::<Vec<_>>());
        let total: usize = (0..3).map(|t| OpStream::new(&spec, t).count()).sum();
        assert_eq!(total, 1000);
    }

    #[test]
    fn values_are_deterministic() {
        assert_eq!(value_for(3, 4, 100), value_for(3, 4, 100));
        assert_ne!(value_for(3, 4, 100), value_for(3, 5, 100));
        assert_eq!(value_for(1, 1, 13).len(), 13);
        assert_ne!(key_for(1), key_for(2));
    }
}
