//! Write-ahead log of fixed-size, hashed blocks holding slotted update records.
//!
//! ```text
//! file:   header (64 B) | block | block | ...
//! header: magic "TKVWAL01", version u32, hash id u32, block_bytes u32, pad, base_seq u64
//! block:  {block_seq u64, record_count u32, used u32, content_hash u64, magic u32, pad u32}
//!         records grow from byte 32; u32 record offsets grow down from the block end
//! record: key_len u16, op u8, seq u64, value_len u32, key, value
//! ```
//!
//! The content hash covers every byte after the block header. Each producer thread fills its
//! own block buffer; one flusher steals all buffers, writes them and syncs.

use std::cell::Cell;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use bytes::{Buf, BufMut, Bytes};
use parking_lot::{Condvar, Mutex};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::fault::{checkpoint_hit, guarded_write, CrashPoint, FaultInjector};
use crate::model::{Key, Payload, Update};
use crate::stats::StatsCounters;

pub const FILE_HEADER_BYTES: usize = 64;
pub const BLOCK_HEADER_BYTES: usize = 32;
const FILE_MAGIC: &[u8; 8] = b"TKVWAL01";
const BLOCK_MAGIC: u32 = 0x574b_424c;
const VERSION: u32 = 1;
const HASH_XXH3_64: u32 = 1;
const RECORD_OVERHEAD: usize = 15;
const SHARDS: usize = 8;

pub fn record_len(key: &[u8], payload: &Payload) -> usize {
    RECORD_OVERHEAD + key.len() + payload.len()
}

/// Largest record a block of `block_bytes` can hold.
pub fn max_record(block_bytes: usize) -> usize {
    block_bytes - BLOCK_HEADER_BYTES - 4
}

struct Builder {
    buf: Vec<u8>,
    slots: Vec<u32>,
    block_bytes: usize,
}

impl Builder {
    fn new(block_bytes: usize) -> Self {
        let mut buf = Vec::with_capacity(block_bytes);
        buf.resize(BLOCK_HEADER_BYTES, 0);
        Builder { buf, slots: Vec::new(), block_bytes }
    }

    fn room(&self) -> usize {
        self.block_bytes - self.buf.len() - 4 * self.slots.len()
    }

    fn fits(&self, n: usize) -> bool {
        self.room() >= n + 4
    }

    fn push(&mut self, seq: u64, key: &[u8], payload: &Payload) {
        self.slots.push(self.buf.len() as u32);
        self.buf.put_u16_le(key.len() as u16);
        self.buf.put_u8(!payload.is_tombstone() as u8);
        self.buf.put_u64_le(seq);
        self.buf.put_u32_le(payload.len() as u32);
        self.buf.put_slice(key);
        if let Payload::Value(v) = payload {
            self.buf.put_slice(v);
        }
    }

    /// Finishes the block body; the header is completed when the block is written.
    fn take(&mut self) -> Option<Vec<u8>> {
        if self.slots.is_empty() {
            return None;
        }
        let mut buf = std::mem::replace(&mut self.buf, Vec::with_capacity(self.block_bytes));
        self.buf.resize(BLOCK_HEADER_BYTES, 0);
        let used = buf.len() - BLOCK_HEADER_BYTES;
        buf.resize(self.block_bytes - 4 * self.slots.len(), 0);
        for s in self.slots.iter().rev() {
            buf.put_u32_le(*s);
        }
        let count = self.slots.len() as u32;
        self.slots.clear();
        buf[8..12].copy_from_slice(&count.to_le_bytes());
        buf[12..16].copy_from_slice(&(used as u32).to_le_bytes());
        Some(buf)
    }
}

fn seal_header(block: &mut [u8], block_seq: u64) {
    block[0..8].copy_from_slice(&block_seq.to_le_bytes());
    let hash = xxh3_64(&block[BLOCK_HEADER_BYTES..]);
    block[16..24].copy_from_slice(&hash.to_le_bytes());
    block[24..28].copy_from_slice(&BLOCK_MAGIC.to_le_bytes());
}

fn file_header(block_bytes: usize, base_seq: u64) -> Vec<u8> {
    let mut h = Vec::with_capacity(FILE_HEADER_BYTES);
    h.put_slice(FILE_MAGIC);
    h.put_u32_le(VERSION);
    h.put_u32_le(HASH_XXH3_64);
    h.put_u32_le(block_bytes as u32);
    h.put_u32_le(0);
    h.put_u64_le(base_seq);
    h.resize(FILE_HEADER_BYTES, 0);
    h
}

/// Parses one block; `None` if it is torn or corrupt.
fn parse_block(block: &[u8]) -> Option<Vec<Update>> {
    let mut h = &block[..BLOCK_HEADER_BYTES];
    let _block_seq = h.get_u64_le();
    let count = h.get_u32_le() as usize;
    let used = h.get_u32_le() as usize;
    let hash = h.get_u64_le();
    if h.get_u32_le() != BLOCK_MAGIC || xxh3_64(&block[BLOCK_HEADER_BYTES..]) != hash {
        return None;
    }
    let end = BLOCK_HEADER_BYTES + used;
    if count == 0 || end + 4 * count > block.len() {
        return None;
    }
    let bytes = Bytes::copy_from_slice(block);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = block.len() - 4 * (i + 1);
        let off = u32::from_le_bytes(block[at..at + 4].try_into().unwrap()) as usize;
        if off < BLOCK_HEADER_BYTES || off + RECORD_OVERHEAD > end {
            return None;
        }
        let mut r = &block[off..end];
        let klen = r.get_u16_le() as usize;
        let op = r.get_u8();
        let seq = r.get_u64_le();
        let vlen = r.get_u32_le() as usize;
        let kstart = off + RECORD_OVERHEAD;
        if kstart + klen + vlen > end || klen == 0 || op > 1 {
            return None;
        }
        let key = Key::from_bytes(bytes.slice(kstart..kstart + klen));
        let payload = if op == 1 {
            Payload::Value(bytes.slice(kstart + klen..kstart + klen + vlen))
        } else {
            Payload::Tombstone
        };
        if out.last().is_some_and(|u: &Update| u.seq >= seq) {
            return None;
        }
        out.push(Update { key, payload, seq });
    }
    Some(out)
}

/// Result of scanning a log file.
#[derive(Debug)]
pub struct Recovered {
    pub block_bytes: usize,
    pub base_seq: u64,
    /// Updates after `base_seq` forming a gap-free sequence, in seq order.
    pub updates: Vec<Update>,
    /// Highest seq seen in any valid block.
    pub max_seen: u64,
    /// Number of valid blocks before the first invalid one.
    pub valid_blocks: usize,
}

/// Recovers a log image. Blocks are read until the first one that fails validation; records
/// after `max(base_seq, floor)` are returned up to the first missing seq. `floor` is the seq
/// already covered elsewhere (the last checkpoint).
pub fn recover_bytes(data: &[u8], floor: u64) -> Result<Recovered> {
    let halt = |reason: &str| Error::RecoveryHalt { offset: 0, reason: reason.to_string() };
    if data.len() < FILE_HEADER_BYTES {
        return Err(halt("log header truncated"));
    }
    let mut h = &data[..FILE_HEADER_BYTES];
    if &h[..8] != FILE_MAGIC {
        return Err(halt("bad log magic"));
    }
    h.advance(8);
    if h.get_u32_le() != VERSION || h.get_u32_le() != HASH_XXH3_64 {
        return Err(halt("unsupported log version or hash"));
    }
    let block_bytes = h.get_u32_le() as usize;
    h.advance(4);
    let base_seq = h.get_u64_le();
    if block_bytes < 4 * BLOCK_HEADER_BYTES {
        return Err(halt("implausible block size"));
    }
    let mut all = Vec::new();
    let mut valid_blocks = 0;
    for block in data[FILE_HEADER_BYTES..].chunks_exact(block_bytes) {
        match parse_block(block) {
            Some(us) => {
                all.extend(us);
                valid_blocks += 1;
            }
            None => break,
        }
    }
    all.sort_by_key(|u| u.seq);
    let max_seen = all.last().map_or(base_seq, |u| u.seq.max(base_seq));
    let start = base_seq.max(floor);
    let updates: Vec<Update> = (start + 1..)
        .zip(all.into_iter().filter(|u| u.seq > start))
        .take_while(|(expect, u)| u.seq == *expect)
        .map(|(_, u)| u)
        .collect();
    Ok(Recovered { block_bytes, base_seq, updates, max_seen, valid_blocks })
}

struct FileState {
    file: File,
    end: u64,
    next_block_seq: u64,
    base_seq: u64,
}

pub struct Wal {
    path: PathBuf,
    block_bytes: usize,
    sync: bool,
    shards: Vec<Mutex<Builder>>,
    sealed: Mutex<Vec<Vec<u8>>>,
    next_seq: AtomicU64,
    durable: AtomicU64,
    covered: AtomicU64,
    failed: AtomicBool,
    io: Mutex<FileState>,
    stats: Arc<StatsCounters>,
    faults: Option<Arc<FaultInjector>>,
}

static NEXT_THREAD: AtomicUsize = AtomicUsize::new(0);
thread_local! {
    static THREAD_SLOT: Cell<usize> = Cell::new(NEXT_THREAD.fetch_add(1, SeqCst));
}

fn sync_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        File::open(dir)?.sync_all()?;
    }
    Ok(())
}

fn replace_file(path: &Path, contents: &[u8], sync: bool) -> Result<File> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        if sync {
            f.sync_all()?;
        }
    }
    std::fs::rename(&tmp, path)?;
    if sync {
        sync_dir(path)?;
    }
    Ok(OpenOptions::new().read(true).write(true).open(path)?)
}

impl Wal {
    pub fn create(
        path: &Path,
        block_bytes: usize,
        base_seq: u64,
        sync: bool,
        stats: Arc<StatsCounters>,
        faults: Option<Arc<FaultInjector>>,
    ) -> Result<Self> {
        let file = replace_file(path, &file_header(block_bytes, base_seq), sync)?;
        Ok(Self::with_file(path, file, block_bytes, base_seq, base_seq, FILE_HEADER_BYTES as u64, 0, sync, stats, faults))
    }

    /// Opens an existing log, truncating anything after the last valid block.
    pub fn open(
        path: &Path,
        floor: u64,
        sync: bool,
        stats: Arc<StatsCounters>,
        faults: Option<Arc<FaultInjector>>,
    ) -> Result<(Self, Recovered)> {
        let mut data = Vec::new();
        File::open(path)?.read_to_end(&mut data)?;
        let rec = recover_bytes(&data, floor)?;
        let end = (FILE_HEADER_BYTES + rec.valid_blocks * rec.block_bytes) as u64;
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len(end)?;
        let last = rec.updates.last().map_or(rec.base_seq.max(floor), |u| u.seq);
        let wal = Self::with_file(
            path,
            file,
            rec.block_bytes,
            rec.base_seq,
            rec.max_seen.max(last),
            end,
            rec.valid_blocks as u64,
            sync,
            stats,
            faults,
        );
        wal.durable.store(last, SeqCst);
        Ok((wal, rec))
    }

    #[allow(clippy::too_many_arguments)]
    fn with_file(
        path: &Path,
        file: File,
        block_bytes: usize,
        base_seq: u64,
        last_seq: u64,
        end: u64,
        blocks: u64,
        sync: bool,
        stats: Arc<StatsCounters>,
        faults: Option<Arc<FaultInjector>>,
    ) -> Self {
        Wal {
            path: path.to_path_buf(),
            block_bytes,
            sync,
            shards: (0..SHARDS).map(|_| Mutex::new(Builder::new(block_bytes))).collect(),
            sealed: Mutex::new(Vec::new()),
            next_seq: AtomicU64::new(last_seq + 1),
            durable: AtomicU64::new(base_seq),
            covered: AtomicU64::new(base_seq),
            failed: AtomicBool::new(false),
            io: Mutex::new(FileState { file, end, next_block_seq: blocks, base_seq }),
            stats,
            faults,
        }
    }

    pub fn block_bytes(&self) -> usize {
        self.block_bytes
    }

    /// Highest seq assigned so far.
    pub fn last_seq(&self) -> u64 {
        self.next_seq.load(SeqCst) - 1
    }

    /// Highest seq known to be on stable storage.
    pub fn durable_seq(&self) -> u64 {
        self.durable.load(SeqCst)
    }

    fn check_live(&self) -> Result<()> {
        if self.failed.load(SeqCst) {
            Err(Error::Poisoned)
        } else {
            Ok(())
        }
    }

    /// Buffers one update and returns its newly assigned seq.
    pub fn append(&self, key: &Key, payload: &Payload) -> Result<u64> {
        self.check_live()?;
        let n = record_len(key, payload);
        if n > max_record(self.block_bytes) {
            return Err(Error::RecordTooLarge { size: n, capacity: max_record(self.block_bytes) });
        }
        let shard = THREAD_SLOT.with(|s| s.get()) % self.shards.len();
        let mut b = self.shards[shard].lock();
        if !b.fits(n) {
            let block = b.take().expect("a full block holds records");
            self.sealed.lock().push(block);
        }
        let seq = self.next_seq.fetch_add(1, SeqCst);
        b.push(seq, key, payload);
        if !b.fits(RECORD_OVERHEAD + 1) {
            let block = b.take().unwrap();
            self.sealed.lock().push(block);
        }
        Ok(seq)
    }

    /// Writes and syncs every buffered record. Returns the highest seq that is now durable:
    /// every seq up to it is in a synced block.
    pub fn flush(&self) -> Result<u64> {
        let mut io = self.io.lock();
        self.check_live()?;
        let cut = self.next_seq.load(SeqCst) - 1;
        let mut blocks = Vec::new();
        for shard in &self.shards {
            blocks.extend(shard.lock().take());
        }
        // Producers seal blocks while holding their shard lock, so taking the sealed list
        // after visiting every shard sees all blocks holding seqs up to `cut`.
        let mut sealed = std::mem::take(&mut *self.sealed.lock());
        sealed.append(&mut blocks);
        if sealed.is_empty() {
            self.durable.fetch_max(cut, SeqCst);
            return Ok(self.durable_seq());
        }
        let result = self.write_blocks(&mut io, sealed);
        if result.is_err() {
            self.failed.store(true, SeqCst);
        }
        result?;
        self.durable.fetch_max(cut, SeqCst);
        Ok(self.durable_seq())
    }

    fn write_blocks(&self, io: &mut FileState, blocks: Vec<Vec<u8>>) -> Result<()> {
        let faults = self.faults.as_deref();
        for mut block in blocks {
            seal_header(&mut block, io.next_block_seq);
            io.next_block_seq += 1;
            let at = io.end;
            guarded_write(faults, CrashPoint::WalBlockWrite, &block, |d| io.file.write_all_at(d, at))?;
            io.end += block.len() as u64;
            StatsCounters::add(&self.stats.wal_bytes_written, block.len() as u64);
        }
        checkpoint_hit(faults, CrashPoint::WalSync)?;
        if self.sync {
            io.file.sync_data()?;
        }
        Ok(())
    }

    /// Records that a committed checkpoint covers every seq up to `seq`.
    pub fn note_checkpoint(&self, seq: u64) {
        self.covered.fetch_max(seq, SeqCst);
    }

    /// Drops blocks whose records are all at or below `upto`. Returns the bytes reclaimed.
    pub fn trim(&self, upto: u64) -> Result<u64> {
        if upto == 0 {
            return Ok(0);
        }
        if upto > self.covered.load(SeqCst) {
            return Err(Error::InvalidParameter(format!(
                "trim to {upto} beyond checkpoint coverage {}",
                self.covered.load(SeqCst)
            )));
        }
        let mut io = self.io.lock();
        self.check_live()?;
        if upto <= io.base_seq {
            return Ok(0);
        }
        let mut data = vec![0u8; (io.end - FILE_HEADER_BYTES as u64) as usize];
        io.file.read_exact_at(&mut data, FILE_HEADER_BYTES as u64)?;
        let mut image = file_header(self.block_bytes, upto);
        let mut kept = 0u64;
        for block in data.chunks_exact(self.block_bytes) {
            let keep = parse_block(block).is_none_or(|us| us.iter().any(|u| u.seq > upto));
            if keep {
                image.extend_from_slice(block);
                kept += 1;
            }
        }
        let old = io.end;
        io.file = replace_file(&self.path, &image, self.sync)?;
        io.end = image.len() as u64;
        io.base_seq = upto;
        StatsCounters::add(&self.stats.wal_bytes_written, kept * self.block_bytes as u64);
        Ok(old - io.end)
    }

    /// Empties the log and restarts it after `base_seq`.
    pub fn reset(&self, base_seq: u64) -> Result<()> {
        let mut io = self.io.lock();
        for shard in &self.shards {
            shard.lock().take();
        }
        self.sealed.lock().clear();
        io.file = replace_file(&self.path, &file_header(self.block_bytes, base_seq), self.sync)?;
        io.end = FILE_HEADER_BYTES as u64;
        io.base_seq = base_seq;
        self.next_seq.fetch_max(base_seq + 1, SeqCst);
        self.durable.fetch_max(base_seq, SeqCst);
        self.covered.fetch_max(base_seq, SeqCst);
        Ok(())
    }

    pub fn file_len(&self) -> u64 {
        self.io.lock().end
    }
}

/// Background thread flushing the log every `period`.
pub struct Flusher {
    stop: Arc<(Mutex<bool>, Condvar)>,
    handle: Option<JoinHandle<()>>,
}

impl Flusher {
    pub fn spawn(wal: Arc<Wal>, period: Duration) -> Self {
        let stop = Arc::new((Mutex::new(false), Condvar::new()));
        let s = stop.clone();
        let handle = std::thread::Builder::new()
            .name("wal-flusher".into())
            .spawn(move || {
                let (lock, cv) = &*s;
                let mut stopped = lock.lock();
                while !*stopped {
                    cv.wait_for(&mut stopped, period);
                    if *stopped {
                        break;
                    }
                    drop(stopped);
                    if wal.flush().is_err() {
                        return;
                    }
                    stopped = lock.lock();
                }
            })
            .expect("spawn log flusher");
        Flusher { stop, handle: Some(handle) }
    }
}

impl Drop for Flusher {
    fn drop(&mut self) {
        *self.stop.0.lock() = true;
        self.stop.1.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn new_wal(dir: &Path, block: usize) -> Wal {
        Wal::create(&dir.join("WAL"), block, 0, false, Arc::default(), None).unwrap()
    }

    fn put(w: &Wal, k: &str, v: &str) -> u64 {
        w.append(&Key::from(k.as_bytes().to_vec()), &Payload::Value(Bytes::from(v.as_bytes().to_vec()))).unwrap()
    }

    fn read(dir: &Path) -> Vec<u8> {
        std::fs::read(dir.join("WAL")).unwrap()
    }

    #[test]
    fn appends_get_consecutive_seqs() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        assert_eq!(put(&w, "a", "1"), 1);
        assert_eq!(put(&w, "b", "2"), 2);
        assert_eq!(w.flush().unwrap(), 2);
        assert_eq!(w.flush().unwrap(), 2);
    }

    #[test]
    fn concurrent_producers_get_distinct_contiguous_seqs() {
        let d = tempfile::tempdir().unwrap();
        let w = Arc::new(new_wal(d.path(), 4096));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let w = w.clone();
                std::thread::spawn(move || (0..2000).map(|i| put(&w, &format!("t{t}k{i}"), "v")).collect::<Vec<_>>())
            })
            .collect();
        let mut all = BTreeSet::new();
        for h in handles {
            for s in h.join().unwrap() {
                assert!(all.insert(s));
            }
        }
        assert_eq!(all, (1..=8000).collect());
        assert_eq!(w.flush().unwrap(), 8000);
        let rec = recover_bytes(&read(d.path()), 0).unwrap();
        assert_eq!(rec.updates.iter().map(|u| u.seq).collect::<Vec<_>>(), (1..=8000).collect::<Vec<_>>());
    }

    #[test]
    fn exact_fill_seals_block() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        let vlen = max_record(4096) - RECORD_OVERHEAD - 1;
        w.append(&Key::from("k"), &Payload::Value(Bytes::from(vec![1u8; vlen]))).unwrap();
        assert_eq!(w.sealed.lock().len(), 1);
        put(&w, "z", "1");
        w.flush().unwrap();
        let rec = recover_bytes(&read(d.path()), 0).unwrap();
        assert_eq!(rec.valid_blocks, 2);
        assert_eq!(rec.updates.len(), 2);
        let too_big = Payload::Value(Bytes::from(vec![1u8; vlen + 1]));
        assert!(matches!(w.append(&Key::from("k"), &too_big), Err(Error::RecordTooLarge { .. })));
    }

    #[test]
    fn round_trip_hundred_updates() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        let mut want = Vec::new();
        for i in 0..100 {
            let k = Key::from(format!("k{i}").into_bytes());
            let p = if i % 7 == 0 { Payload::Tombstone } else { Payload::Value(Bytes::from(format!("v{i}"))) };
            let seq = w.append(&k, &p).unwrap();
            want.push(Update { key: k, payload: p, seq });
        }
        w.flush().unwrap();
        drop(w);
        let (w, rec) = Wal::open(&d.path().join("WAL"), 0, false, Arc::default(), None).unwrap();
        assert_eq!(rec.updates, want);
        assert_eq!(put(&w, "next", "x"), 101);
    }

    #[test]
    fn truncated_tail_block_is_ignored() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        for b in 0..3 {
            for i in 0..5 {
                put(&w, &format!("b{b}i{i}"), "v");
            }
            w.flush().unwrap();
        }
        let data = read(d.path());
        assert_eq!(recover_bytes(&data, 0).unwrap().updates.len(), 15);
        let cut = &data[..data.len() - 100];
        let rec = recover_bytes(cut, 0).unwrap();
        assert_eq!(rec.updates.len(), 10);
        assert_eq!(rec.valid_blocks, 2);
        assert!(matches!(recover_bytes(&data[..10], 0), Err(Error::RecoveryHalt { .. })));
    }

    #[test]
    fn floor_skips_a_gap_the_checkpoint_covers() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        for i in 0..10 {
            put(&w, &format!("a{i}"), "v");
        }
        w.flush().unwrap();
        let mut data = read(d.path());
        for i in 0..5 {
            put(&w, &format!("b{i}"), "v");
        }
        w.flush().unwrap();
        let tail = read(d.path())[data.len()..].to_vec();
        data.truncate(FILE_HEADER_BYTES);
        data.extend_from_slice(&tail);
        assert!(recover_bytes(&data, 0).unwrap().updates.is_empty());
        let rec = recover_bytes(&data, 10).unwrap();
        assert_eq!(rec.updates.iter().map(|u| u.seq).collect::<Vec<_>>(), (11..=15).collect::<Vec<_>>());
    }

    #[test]
    fn corruption_always_yields_a_seq_prefix() {
        use rand::{Rng, SeedableRng};
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        for i in 0..400 {
            put(&w, &format!("key{i}"), &"x".repeat(i % 50));
            if i % 37 == 0 {
                w.flush().unwrap();
            }
        }
        w.flush().unwrap();
        let clean = read(d.path());
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..300 {
            let mut data = clean.clone();
            for _ in 0..rng.gen_range(1..4) {
                let at = rng.gen_range(FILE_HEADER_BYTES..data.len());
                data[at] ^= 1 << rng.gen_range(0..8);
            }
            let rec = recover_bytes(&data, 0).unwrap();
            let seqs: Vec<u64> = rec.updates.iter().map(|u| u.seq).collect();
            assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn trim_drops_covered_blocks() {
        let d = tempfile::tempdir().unwrap();
        let w = new_wal(d.path(), 4096);
        assert_eq!(w.trim(0).unwrap(), 0);
        for i in 0..300 {
            put(&w, &format!("key{i}"), "some value bytes");
            if i == 199 {
                w.flush().unwrap();
            }
        }
        w.flush().unwrap();
        let before = w.file_len();
        assert!(matches!(w.trim(200), Err(Error::InvalidParameter(_))));
        w.note_checkpoint(200);
        let reclaimed = w.trim(200).unwrap();
        assert!(reclaimed > 0);
        assert_eq!(w.file_len(), before - reclaimed);
        assert_eq!(w.trim(200).unwrap(), 0);
        let rec = recover_bytes(&read(d.path()), 0).unwrap();
        assert_eq!(rec.base_seq, 200);
        assert_eq!(rec.updates.iter().map(|u| u.seq).collect::<Vec<_>>(), (201..=300).collect::<Vec<_>>());
    }

    #[test]
    fn torn_block_write_is_skipped() {
        let d = tempfile::tempdir().unwrap();
        let faults = Arc::new(FaultInjector::new());
        let w = Wal::create(&d.path().join("WAL"), 4096, 0, false, Arc::default(), Some(faults.clone())).unwrap();
        put(&w, "a", "1");
        let durable = w.flush().unwrap();
        faults.arm(Some(CrashPoint::WalBlockWrite), 0, true);
        put(&w, "b", "2");
        assert!(w.flush().is_err());
        assert_eq!(w.durable_seq(), durable);
        let rec = recover_bytes(&read(d.path()), 0).unwrap();
        assert_eq!(rec.updates.len(), 1);
    }

    #[test]
    fn background_flusher_makes_appends_durable() {
        let d = tempfile::tempdir().unwrap();
        let w = Arc::new(new_wal(d.path(), 4096));
        let f = Flusher::spawn(w.clone(), Duration::from_millis(1));
        let s = put(&w, "a", "1");
        let t = std::time::Instant::now();
        while w.durable_seq() < s {
            assert!(t.elapsed() < Duration::from_secs(5));
            std::thread::sleep(Duration::from_millis(1));
        }
        drop(f);
    }
}
