//! The store facade: log, memtables, checkpoint pipeline and page store under one handle.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering::SeqCst};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpointer, ExternalizeReport, Manifest, StorePages};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fault::FaultInjector;
use crate::memtable::{stack_get, MemLookup, MemTable};
use crate::model::{merge_runs, Batch, Key, Payload, Update};
use crate::page::PageStore;
use crate::stats::{StatsCounters, StatsSnapshot};
use crate::tree::{point_query, range_scan, Lookup, TreeRoot};
use crate::wal::{Flusher, Wal};

const CONFIG_FILE: &str = "CONFIG";
const MANIFEST_FILE: &str = "MANIFEST";
const WAL_FILE: &str = "WAL";
const CONFIG_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    version: u32,
    config: Config,
}

/// What readers see: the active table, finalized tables not yet in the tree (newest first)
/// and the pending tree.
struct View {
    active: Arc<MemTable>,
    deltas: Vec<Arc<MemTable>>,
    tree: TreeRoot,
}

struct Finalized {
    table: Arc<MemTable>,
    batch: Option<Batch>,
    seq_upper: u64,
}

struct Inner {
    cfg: Config,
    stats: Arc<StatsCounters>,
    faults: Option<Arc<FaultInjector>>,
    wal: Arc<Wal>,
    store: Arc<PageStore>,
    pages: Arc<StorePages>,
    gate: RwLock<()>,
    view: RwLock<Arc<View>>,
    queue: Mutex<VecDeque<Finalized>>,
    pipeline: Mutex<Checkpointer>,
    poisoned: AtomicBool,
    threshold: u64,
    trim_bytes: u64,
}

/// Counter snapshot plus derived ratios.
#[derive(Clone, Debug, Serialize)]
pub struct StoreStats {
    pub counters: StatsSnapshot,
    /// Bytes written to pools, log and manifest over user bytes; 0 when nothing was ingested.
    pub write_amplification: f64,
    /// False when `write_amplification` has a zero denominator.
    pub write_amplification_defined: bool,
    /// Store files' live bytes on disk.
    pub disk_bytes: u64,
    pub memtable_bytes: u64,
    pub pending_batches: usize,
    pub dirty_pages: usize,
    pub chi: usize,
    pub generation: u64,
    pub tree_height: u32,
    pub cache_bytes: usize,
}

pub struct Store {
    inner: Arc<Inner>,
    flusher: Option<Flusher>,
    dir: PathBuf,
    closed: bool,
}

fn validate(cfg: &Config, key: &[u8], value: Option<&[u8]>) -> Result<Key> {
    let key = Key::new(Bytes::copy_from_slice(key))?;
    if let Some(v) = value {
        if v.len() > cfg.max_value_bytes() {
            return Err(Error::InvalidArgument(format!(
                "value of {} bytes exceeds the {}-byte limit",
                v.len(),
                cfg.max_value_bytes()
            )));
        }
    }
    Ok(key)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>, cfg: Config) -> Result<Self> {
        Self::open_with_faults(dir, cfg, None)
    }

    /// Opens or creates a store. A store written with a different page layout is refused;
    /// runtime knobs (χ, cache budget, polling period, sync) come from `cfg`.
    pub fn open_with_faults(dir: impl AsRef<Path>, cfg: Config, faults: Option<Arc<FaultInjector>>) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.as_ref().to_path_buf();
        let stats = Arc::new(StatsCounters::default());
        let cfg_path = dir.join(CONFIG_FILE);
        let existing = cfg_path.exists();
        let open_err = |what: &str, e: Error| Error::OpenFailure(format!("{what}: {e}"));
        if existing {
            let text = std::fs::read_to_string(&cfg_path).map_err(|e| open_err("reading CONFIG", e.into()))?;
            let stored: StoredConfig =
                serde_json::from_str(&text).map_err(|e| Error::OpenFailure(format!("parsing CONFIG: {e}")))?;
            if stored.version != CONFIG_VERSION {
                return Err(Error::OpenFailure(format!("CONFIG version {}, expected {CONFIG_VERSION}", stored.version)));
            }
            if !stored.config.same_layout(&cfg) {
                return Err(Error::OpenFailure("configuration does not match the store's page layout".into()));
            }
        } else {
            std::fs::create_dir_all(&dir)?;
        }
        let store = Arc::new(
            PageStore::open(&dir, &cfg, !existing, stats.clone(), faults.clone()).map_err(|e| open_err("page pools", e))?,
        );
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if existing {
            Manifest::open(&manifest_path, cfg.sync, stats.clone(), faults.clone())?
        } else {
            Manifest::create(&manifest_path, cfg.sync, stats.clone(), faults.clone())?
        };
        let cp = Checkpointer::open(&cfg, store.clone(), manifest).map_err(|e| match e {
            Error::OpenFailure(_) => e,
            e => open_err("loading checkpoint", e),
        })?;
        let wal_path = dir.join(WAL_FILE);
        let (wal, replay) = if existing {
            let (wal, rec) = Wal::open(&wal_path, cp.durable_seq(), cfg.sync, stats.clone(), faults.clone())?;
            (wal, Some(rec))
        } else {
            (Wal::create(&wal_path, cfg.wal_block_bytes, 0, cfg.sync, stats.clone(), faults.clone())?, None)
        };
        if !existing {
            let text = serde_json::to_string_pretty(&StoredConfig { version: CONFIG_VERSION, config: cfg.clone() })
                .map_err(|e| Error::OpenFailure(e.to_string()))?;
            std::fs::write(&cfg_path, text)?;
        }
        let pages = cp.pages().clone();
        let view = View { active: Arc::new(MemTable::new()), deltas: Vec::new(), tree: cp.tree().clone() };
        let inner = Arc::new(Inner {
            threshold: cfg.leaf_payload_bytes() as u64,
            trim_bytes: 16 * cfg.wal_block_bytes as u64,
            cfg,
            stats,
            faults,
            wal: Arc::new(wal),
            store,
            pages,
            gate: RwLock::new(()),
            view: RwLock::new(Arc::new(view)),
            queue: Mutex::new(VecDeque::new()),
            pipeline: Mutex::new(cp),
            poisoned: AtomicBool::new(false),
        });
        if let Some(rec) = replay {
            inner.replay(rec.updates, rec.max_seen)?;
        }
        let flusher = (inner.cfg.wal_poll_ms > 0)
            .then(|| Flusher::spawn(inner.wal.clone(), Duration::from_millis(inner.cfg.wal_poll_ms)));
        Ok(Store { inner, flusher, dir, closed: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &Config {
        &self.inner.cfg
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<u64> {
        let key = validate(&self.inner.cfg, key, Some(value))?;
        self.inner.write(key, Payload::Value(Bytes::copy_from_slice(value)))
    }

    pub fn delete(&self, key: &[u8]) -> Result<u64> {
        let key = validate(&self.inner.cfg, key, None)?;
        self.inner.write(key, Payload::Tombstone)
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Bytes>> {
        self.inner.get(key)
    }

    /// Up to `limit` live pairs with keys `>= start`, ascending.
    pub fn scan(&self, start: &[u8], limit: usize) -> Result<Vec<(Key, Bytes)>> {
        self.inner.scan(start, limit)
    }

    /// Writes buffered log records. Returns the highest seq now durable.
    pub fn sync_wal(&self) -> Result<u64> {
        self.inner.check()?;
        self.inner.wal.flush().inspect_err(|e| self.inner.fail(e))
    }

    /// Makes everything written so far part of a committed checkpoint.
    pub fn flush(&self) -> Result<Option<ExternalizeReport>> {
        self.inner.flush()
    }

    /// Sets χ; returns the report of the externalization a shrink forced, if any.
    pub fn set_checkpoint_distance(&self, chi: usize) -> Result<Option<ExternalizeReport>> {
        self.inner.check()?;
        let mut cp = self.inner.pipeline.lock();
        let report = cp.set_checkpoint_distance(chi).inspect_err(|e| self.inner.fail(e))?;
        if let Some(r) = &report {
            self.inner.after_checkpoint(r)?;
        }
        Ok(report)
    }

    pub fn checkpoint_distance(&self) -> usize {
        self.inner.pipeline.lock().chi()
    }

    pub fn set_cache_budget(&self, bytes: usize) {
        self.inner.store.set_cache_budget(bytes);
    }

    /// Records written segments in externalization reports.
    pub fn set_trace(&self, on: bool) {
        self.inner.pipeline.lock().set_trace(on);
    }

    pub fn stats(&self) -> StoreStats {
        self.inner.stats()
    }

    pub fn counters(&self) -> &Arc<StatsCounters> {
        &self.inner.stats
    }

    pub fn page_store(&self) -> &Arc<PageStore> {
        &self.inner.store
    }

    /// Logical bytes of live data (keys plus values), by full scan.
    pub fn logical_bytes(&self) -> Result<u64> {
        let mut total = 0u64;
        let mut start = Vec::new();
        loop {
            let chunk = self.scan(&start, 4096)?;
            let Some((last, _)) = chunk.last() else { break };
            start = last.to_vec();
            start.push(0);
            total += chunk.iter().map(|(k, v)| (k.len() + v.len()) as u64).sum::<u64>();
        }
        Ok(total)
    }

    /// Disk bytes over logical bytes; `None` for an empty store.
    pub fn space_amplification(&self) -> Result<Option<f64>> {
        let logical = self.logical_bytes()?;
        Ok((logical > 0).then(|| self.inner.disk_bytes() as f64 / logical as f64))
    }

    /// Verifies refcounts against the committed checkpoint and the pending tree's invariants.
    pub fn audit(&self) -> Result<()> {
        let cp = self.inner.pipeline.lock();
        cp.audit()?;
        crate::tree::check_tree(cp.tree_config(), &**cp.pages(), cp.tree())
    }

    pub fn is_poisoned(&self) -> bool {
        self.inner.poisoned.load(SeqCst)
    }

    pub fn fault_injector(&self) -> Option<&Arc<FaultInjector>> {
        self.inner.faults.as_ref()
    }

    /// Flushes everything and shuts the store down.
    pub fn close(mut self) -> Result<()> {
        self.shutdown()
    }

    /// Stops the store as a process kill would: nothing buffered in memory is written.
    pub fn simulate_crash(mut self) {
        self.closed = true;
        self.inner.poisoned.store(true, SeqCst);
        self.flusher.take();
    }

    fn shutdown(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.flusher.take();
        if self.is_poisoned() {
            return Ok(());
        }
        self.inner.flush().map(|_| ())
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

impl Inner {
    fn check(&self) -> Result<()> {
        if self.poisoned.load(SeqCst) {
            Err(Error::Poisoned)
        } else {
            Ok(())
        }
    }

    fn fail(&self, e: &Error) {
        if !matches!(e, Error::InvalidArgument(_) | Error::InvalidParameter(_) | Error::RecordTooLarge { .. }) {
            self.poisoned.store(true, SeqCst);
        }
    }

    fn replay(&self, updates: Vec<Update>, max_seen: u64) -> Result<()> {
        for u in updates {
            let full = {
                let view = self.view.read();
                view.active.insert(u)?;
                view.active.bytes() >= self.threshold
            };
            if full {
                self.rotate(false, true)?;
            }
        }
        self.rotate(true, true)?;
        self.flush()?;
        let mut cp = self.pipeline.lock();
        cp.cover_seq(max_seen);
        let report = cp.externalize()?;
        drop(cp);
        self.wal.reset(report.seq_upper.max(max_seen))
    }

    fn write(&self, key: Key, payload: Payload) -> Result<u64> {
        self.check()?;
        let user_bytes = (key.len() + payload.len()) as u64;
        let (seq, full) = {
            let _g = self.gate.read();
            let view = self.view.read().clone();
            let seq = self.wal.append(&key, &payload).inspect_err(|e| self.fail(e))?;
            view.active.insert(Update { key, payload, seq })?;
            (seq, view.active.bytes() >= self.threshold)
        };
        StatsCounters::add(&self.stats.user_bytes_in, user_bytes);
        StatsCounters::add(&self.stats.keys_in, 1);
        if full {
            self.rotate(false, false)?;
        }
        Ok(seq)
    }

    /// Finalizes the active table and runs the pipeline over every queued table. While
    /// replaying, the log already holds seqs beyond the table, so coverage stops at the batch.
    fn rotate(&self, force: bool, replaying: bool) -> Result<()> {
        {
            let _g = self.gate.write();
            let mut view = self.view.write();
            if view.active.is_empty() || (!force && view.active.bytes() < self.threshold) {
                if !force {
                    return Ok(());
                }
            } else {
                let old = view.active.clone();
                let batch = old.finalize()?;
                let mut deltas = Vec::with_capacity(view.deltas.len() + 1);
                deltas.push(old.clone());
                deltas.extend(view.deltas.iter().cloned());
                *view = Arc::new(View { active: Arc::new(MemTable::new()), deltas, tree: view.tree.clone() });
                let seq_upper = match (&batch, replaying) {
                    (Some(b), true) => b.max_seq(),
                    (None, true) => 0,
                    _ => self.wal.last_seq(),
                };
                self.queue.lock().push_back(Finalized { table: old, batch, seq_upper });
            }
        }
        self.drain()
    }

    fn drain(&self) -> Result<()> {
        let mut cp = self.pipeline.lock();
        loop {
            self.check()?;
            let Some(item) = self.queue.lock().pop_front() else { return Ok(()) };
            let due = match &item.batch {
                Some(b) => cp.apply_batch(b).inspect_err(|e| self.fail(e))?,
                None => false,
            };
            cp.cover_seq(item.seq_upper);
            {
                let mut view = self.view.write();
                let deltas = view.deltas.iter().filter(|t| !Arc::ptr_eq(t, &item.table)).cloned().collect();
                *view = Arc::new(View { active: view.active.clone(), deltas, tree: cp.tree().clone() });
            }
            self.observe_memory(&cp);
            if due {
                let report = cp.externalize().inspect_err(|e| self.fail(e))?;
                self.after_checkpoint(&report)?;
                self.publish_tree(&cp);
            }
        }
    }

    fn publish_tree(&self, cp: &Checkpointer) {
        let mut view = self.view.write();
        *view = Arc::new(View { active: view.active.clone(), deltas: view.deltas.clone(), tree: cp.tree().clone() });
    }

    fn after_checkpoint(&self, report: &ExternalizeReport) -> Result<()> {
        self.wal.note_checkpoint(report.seq_upper);
        if self.wal.file_len() > self.trim_bytes {
            self.wal.trim(report.seq_upper).inspect_err(|e| self.fail(e))?;
        }
        Ok(())
    }

    fn flush(&self) -> Result<Option<ExternalizeReport>> {
        self.check()?;
        self.wal.flush().inspect_err(|e| self.fail(e))?;
        self.rotate(true, false)?;
        let mut cp = self.pipeline.lock();
        let report = cp.externalize().inspect_err(|e| self.fail(e))?;
        self.after_checkpoint(&report)?;
        self.publish_tree(&cp);
        Ok(Some(report))
    }

    fn observe_memory(&self, cp: &Checkpointer) {
        let view = self.view.read().clone();
        let tables: u64 = view.active.bytes() + view.deltas.iter().map(|t| t.bytes()).sum::<u64>();
        let total = tables + cp.dirty().1 + self.store.cache_used_bytes() as u64 + self.pages.decoded_bytes() as u64;
        self.stats.observe_memory(total);
    }

    /// Runs `f` against the current view, retrying with a newer view if a page it read was
    /// freed by a concurrent checkpoint.
    fn with_view<T>(&self, f: impl Fn(&View) -> Result<T>) -> Result<T> {
        loop {
            let view = self.view.read().clone();
            match f(&view) {
                Err(Error::UseAfterFree(_)) if !Arc::ptr_eq(&view, &self.view.read()) => continue,
                r => return r,
            }
        }
    }

    fn get(&self, key: &[u8]) -> Result<Option<Bytes>> {
        self.check()?;
        self.with_view(|view| {
            Ok(match stack_get(&view.active, &view.deltas, key) {
                MemLookup::Found(v) => Some(v),
                MemLookup::Deleted => None,
                MemLookup::Fallthrough => match point_query(&*self.pages, &view.tree, key)? {
                    Lookup::Found(v) => Some(v),
                    Lookup::Deleted | Lookup::Absent => None,
                },
            })
        })
    }

    fn scan(&self, start: &[u8], limit: usize) -> Result<Vec<(Key, Bytes)>> {
        self.check()?;
        if limit == 0 {
            return Ok(Vec::new());
        }
        self.with_view(|view| {
            let mut out: Vec<(Key, Bytes)> = Vec::new();
            let mut cursor = start.to_vec();
            while out.len() < limit {
                let want = limit - out.len();
                let mut runs: Vec<Vec<Update>> = std::iter::once(&view.active)
                    .chain(view.deltas.iter())
                    .map(|t| t.range(&cursor, want))
                    .collect();
                let mut truncated: Vec<Key> =
                    runs.iter().filter(|r| r.len() == want).map(|r| r.last().unwrap().key.clone()).collect();
                let tree_rows = if cursor.is_empty() {
                    range_scan(&*self.pages, &view.tree, &Key::from_bytes(Bytes::from_static(&[0])), want)?
                } else {
                    range_scan(&*self.pages, &view.tree, &Key::from_bytes(Bytes::from(cursor.clone())), want)?
                };
                if tree_rows.len() == want {
                    truncated.push(tree_rows.last().unwrap().0.clone());
                }
                runs.push(tree_rows.into_iter().map(|(key, v)| Update { key, payload: Payload::Value(v), seq: 0 }).collect());
                let frontier = truncated.into_iter().min();
                let refs: Vec<&[Update]> = runs.iter().map(Vec::as_slice).collect();
                for u in merge_runs(&refs, true)? {
                    if frontier.as_ref().is_some_and(|f| u.key > *f) || out.len() == limit {
                        break;
                    }
                    if let Payload::Value(v) = u.payload {
                        out.push((u.key, v));
                    }
                }
                let Some(f) = frontier else { break };
                cursor = f.to_vec();
                cursor.push(0);
            }
            Ok(out)
        })
    }

    fn disk_bytes(&self) -> u64 {
        self.store.live_bytes() + self.wal.file_len() + self.pipeline.lock().manifest_len()
    }

    fn stats(&self) -> StoreStats {
        let counters = self.stats.snapshot();
        let view = self.view.read().clone();
        let cp = self.pipeline.lock();
        let wa = counters.write_amplification();
        StoreStats {
            write_amplification: wa.unwrap_or(0.0),
            write_amplification_defined: wa.is_some(),
            disk_bytes: self.store.live_bytes() + self.wal.file_len() + cp.manifest_len(),
            memtable_bytes: view.active.bytes() + view.deltas.iter().map(|t| t.bytes()).sum::<u64>(),
            pending_batches: cp.batches_applied(),
            dirty_pages: cp.dirty().0,
            chi: cp.chi(),
            generation: cp.generation(),
            tree_height: cp.tree().height(),
            cache_bytes: self.store.cache_used_bytes(),
            counters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::CrashPoint;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn small() -> Config {
        Config {
            node_page_bytes: 4096,
            leaf_page_bytes: 16384,
            block_bytes: 1024,
            pivot_capacity: 8,
            chi: 2,
            wal_block_bytes: 4096,
            wal_poll_ms: 0,
            sync: false,
            pool_max_pages: 1 << 16,
            ..Config::default()
        }
    }

    fn key(i: u32) -> Vec<u8> {
        format!("key{i:06}").into_bytes()
    }

    fn churn(s: &Store, oracle: &mut BTreeMap<Vec<u8>, Vec<u8>>, seed: u64, n: usize) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        for i in 0..n {
            let k = key(rng.gen_range(0..2000));
            if rng.gen_bool(0.15) {
                s.delete(&k).unwrap();
                oracle.remove(&k);
            } else {
                let v = vec![(i % 251) as u8; rng.gen_range(1..80)];
                s.put(&k, &v).unwrap();
                oracle.insert(k, v);
            }
        }
    }

    fn assert_same(s: &Store, oracle: &BTreeMap<Vec<u8>, Vec<u8>>) {
        let all = s.scan(b"", usize::MAX).unwrap();
        let want: Vec<(Vec<u8>, Vec<u8>)> = oracle.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let got: Vec<(Vec<u8>, Vec<u8>)> = all.into_iter().map(|(k, v)| (k.to_vec(), v.to_vec())).collect();
        assert_eq!(got, want);
        for i in (0..2000).step_by(13) {
            let k = key(i);
            assert_eq!(s.get(&k).unwrap().map(|b| b.to_vec()), oracle.get(&k).cloned());
        }
    }

    #[test]
    fn reads_follow_writes_across_rotations() {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open(d.path(), small()).unwrap();
        let mut oracle = BTreeMap::new();
        churn(&s, &mut oracle, 1, 6000);
        assert!(s.stats().generation > 0);
        assert_same(&s, &oracle);
        let from = key(500);
        let page = s.scan(&from, 17).unwrap();
        let want: Vec<Vec<u8>> = oracle.range(from.clone()..).take(17).map(|(k, _)| k.clone()).collect();
        assert_eq!(page.iter().map(|(k, _)| k.to_vec()).collect::<Vec<_>>(), want);
        s.audit().unwrap();
    }

    #[test]
    fn close_and_reopen_keeps_everything() {
        let d = tempfile::tempdir().unwrap();
        let mut oracle = BTreeMap::new();
        let s = Store::open(d.path(), small()).unwrap();
        churn(&s, &mut oracle, 2, 3000);
        s.close().unwrap();
        let s = Store::open(d.path(), Config { chi: 5, ..small() }).unwrap();
        assert_eq!(s.checkpoint_distance(), 5);
        assert_same(&s, &oracle);
        churn(&s, &mut oracle, 3, 2000);
        drop(s);
        let s = Store::open(d.path(), small()).unwrap();
        assert_same(&s, &oracle);
        s.audit().unwrap();
    }

    #[test]
    fn crash_keeps_synced_writes() {
        let d = tempfile::tempdir().unwrap();
        let mut oracle = BTreeMap::new();
        let s = Store::open(d.path(), Config { chi: 4, ..small() }).unwrap();
        churn(&s, &mut oracle, 4, 4000);
        s.sync_wal().unwrap();
        s.simulate_crash();
        let s = Store::open(d.path(), small()).unwrap();
        assert_same(&s, &oracle);
        s.audit().unwrap();
    }

    #[test]
    fn layout_mismatch_is_refused() {
        let d = tempfile::tempdir().unwrap();
        Store::open(d.path(), small()).unwrap().close().unwrap();
        let err = Store::open(d.path(), Config { leaf_page_bytes: 32768, ..small() }).err().unwrap();
        assert!(matches!(err, Error::OpenFailure(_)));
    }

    #[test]
    fn bad_arguments_do_not_poison() {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open(d.path(), small()).unwrap();
        assert!(matches!(s.put(b"", b"v"), Err(Error::InvalidArgument(_))));
        let big = vec![0u8; s.config().max_value_bytes() + 1];
        assert!(matches!(s.put(b"k", &big), Err(Error::InvalidArgument(_))));
        assert!(matches!(s.set_checkpoint_distance(0), Err(Error::InvalidParameter(_))));
        s.put(b"k", b"v").unwrap();
        assert_eq!(s.get(b"k").unwrap().unwrap(), "v");
    }

    #[test]
    fn pipeline_failure_poisons() {
        let d = tempfile::tempdir().unwrap();
        let faults = Arc::new(FaultInjector::new());
        let s = Store::open_with_faults(d.path(), Config { chi: 1, ..small() }, Some(faults.clone())).unwrap();
        faults.arm(Some(CrashPoint::ManifestCommit), 0, false);
        let mut failed = false;
        for i in 0..5000 {
            if s.put(&key(i), &[7u8; 40]).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
        assert!(s.is_poisoned());
        assert!(matches!(s.get(b"x"), Err(Error::Poisoned)));
    }

    #[test]
    fn shrinking_chi_checkpoints_pending_batches() {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open(d.path(), Config { chi: 64, ..small() }).unwrap();
        for i in 0..3000 {
            s.put(&key(i), &[1u8; 30]).unwrap();
        }
        let before = s.stats();
        assert!(before.pending_batches > 0);
        let r = s.set_checkpoint_distance(1).unwrap().expect("forced checkpoint");
        assert_eq!(r.generation, before.generation + 1);
        assert_eq!(s.stats().pending_batches, 0);
    }

    #[test]
    fn concurrent_writers_and_readers() {
        let d = tempfile::tempdir().unwrap();
        let s = Arc::new(Store::open(d.path(), Config { wal_poll_ms: 1, ..small() }).unwrap());
        let handles: Vec<_> = (0..4u32)
            .map(|t| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for i in 0..1500u32 {
                        let k = key(t * 10_000 + i);
                        s.put(&k, &k).unwrap();
                        if i % 7 == 0 {
                            assert_eq!(s.get(&k).unwrap().unwrap(), k);
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(s.scan(b"", usize::MAX).unwrap().len(), 6000);
        s.audit().unwrap();
    }
}
