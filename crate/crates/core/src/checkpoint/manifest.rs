//! Checkpoint manifest: an append-only log of two-phase checkpoint commits.
//!
//! ```text
//! header: magic "TKVMAN01", version u32, pad u32
//! record: body_len u32, xxh3 u64 of body, body
//! body:   tag u8, generation u64, ...
//!   1 prepare:  root, seq_upper u64, n u32, n x (page u64, delta i64)
//!   2 commit:   (nothing else)
//!   3 snapshot: root, seq_upper u64, n u32, n x (page u64, count u32)
//! root:   0 empty | 1 leaf (run u64, has_filter u8, filter u64, bytes u64) | 2 node (page u64)
//! ```
//!
//! A prepare only takes effect once a commit with the same generation follows it. Replay stops
//! at the first record that is truncated or fails its hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bytes::{Buf, BufMut};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::fault::{checkpoint_hit, guarded_write, CrashPoint, FaultInjector};
use crate::page::PageId;
use crate::stats::StatsCounters;

const MAGIC: &[u8; 8] = b"TKVMAN01";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 16;
const TAG_PREPARE: u8 = 1;
const TAG_COMMIT: u8 = 2;
const TAG_SNAPSHOT: u8 = 3;
const COMPACT_BYTES: u64 = 1 << 20;

/// Durable identity of a checkpoint's root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RootDesc {
    #[default]
    Empty,
    Leaf { run: PageId, filter: Option<PageId>, bytes: u64 },
    Node(PageId),
}

impl RootDesc {
    /// Pages the checkpoint itself holds a reference to.
    pub fn refs(&self) -> Vec<PageId> {
        match *self {
            RootDesc::Empty => Vec::new(),
            RootDesc::Leaf { run, filter, .. } => std::iter::once(run).chain(filter).collect(),
            RootDesc::Node(p) => vec![p],
        }
    }
}

/// The latest committed checkpoint and the refcount of every live page.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ManifestState {
    pub generation: u64,
    pub root: RootDesc,
    pub seq_upper: u64,
    pub refcounts: HashMap<PageId, u32>,
}

fn put_root(b: &mut Vec<u8>, root: &RootDesc) {
    match *root {
        RootDesc::Empty => b.put_u8(0),
        RootDesc::Leaf { run, filter, bytes } => {
            b.put_u8(1);
            b.put_u64_le(run.raw());
            b.put_u8(filter.is_some() as u8);
            b.put_u64_le(filter.map_or(0, PageId::raw));
            b.put_u64_le(bytes);
        }
        RootDesc::Node(p) => {
            b.put_u8(2);
            b.put_u64_le(p.raw());
        }
    }
}

fn get_root(r: &mut &[u8]) -> Option<RootDesc> {
    Some(match take_u8(r)? {
        0 => RootDesc::Empty,
        1 => {
            let run = PageId::from_raw(take_u64(r)?);
            let has = take_u8(r)? != 0;
            let f = PageId::from_raw(take_u64(r)?);
            RootDesc::Leaf { run, filter: has.then_some(f), bytes: take_u64(r)? }
        }
        2 => RootDesc::Node(PageId::from_raw(take_u64(r)?)),
        _ => return None,
    })
}

fn take_u8(r: &mut &[u8]) -> Option<u8> {
    (r.remaining() >= 1).then(|| r.get_u8())
}
fn take_u32(r: &mut &[u8]) -> Option<u32> {
    (r.remaining() >= 4).then(|| r.get_u32_le())
}
fn take_u64(r: &mut &[u8]) -> Option<u64> {
    (r.remaining() >= 8).then(|| r.get_u64_le())
}

fn frame(body: &[u8]) -> Vec<u8> {
    let mut rec = Vec::with_capacity(body.len() + 12);
    rec.put_u32_le(body.len() as u32);
    rec.put_u64_le(xxh3_64(body));
    rec.put_slice(body);
    rec
}

fn prepare_body(generation: u64, root: &RootDesc, seq_upper: u64, deltas: &[(PageId, i64)]) -> Vec<u8> {
    let mut b = Vec::with_capacity(32 + deltas.len() * 16);
    b.put_u8(TAG_PREPARE);
    b.put_u64_le(generation);
    put_root(&mut b, root);
    b.put_u64_le(seq_upper);
    b.put_u32_le(deltas.len() as u32);
    for (p, d) in deltas {
        b.put_u64_le(p.raw());
        b.put_i64_le(*d);
    }
    b
}

fn snapshot_body(s: &ManifestState) -> Vec<u8> {
    let mut b = Vec::with_capacity(32 + s.refcounts.len() * 12);
    b.put_u8(TAG_SNAPSHOT);
    b.put_u64_le(s.generation);
    put_root(&mut b, &s.root);
    b.put_u64_le(s.seq_upper);
    b.put_u32_le(s.refcounts.len() as u32);
    let mut counts: Vec<_> = s.refcounts.iter().collect();
    counts.sort();
    for (p, c) in counts {
        b.put_u64_le(p.raw());
        b.put_u32_le(*c);
    }
    b
}

fn apply_deltas(counts: &mut HashMap<PageId, u32>, deltas: &[(PageId, i64)]) -> Result<()> {
    for &(p, d) in deltas {
        let next = *counts.get(&p).unwrap_or(&0) as i64 + d;
        if next < 0 {
            return Err(Error::OpenFailure(format!("manifest drives refcount of {p} negative")));
        }
        if next == 0 {
            counts.remove(&p);
        } else {
            counts.insert(p, next as u32);
        }
    }
    Ok(())
}

struct Prepared {
    generation: u64,
    root: RootDesc,
    seq_upper: u64,
    deltas: Vec<(PageId, i64)>,
}

/// Replays a manifest image. Returns the committed state and the length of the valid prefix.
pub fn replay(data: &[u8]) -> Result<(ManifestState, usize)> {
    if data.len() < HEADER_BYTES || &data[..8] != MAGIC {
        return Err(Error::OpenFailure("manifest header missing or bad magic".into()));
    }
    let version = u32::from_le_bytes(data[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::OpenFailure(format!("manifest version {version}, expected {VERSION}")));
    }
    let mut state: Option<ManifestState> = None;
    let mut prepared: Option<Prepared> = None;
    let mut at = HEADER_BYTES;
    loop {
        let mut r = &data[at..];
        let (Some(len), Some(sum)) = (take_u32(&mut r), take_u64(&mut r)) else { break };
        let len = len as usize;
        if r.len() < len || xxh3_64(&r[..len]) != sum {
            break;
        }
        let mut body = &r[..len];
        let parsed = (|| -> Option<()> {
            let tag = take_u8(&mut body)?;
            let generation = take_u64(&mut body)?;
            match tag {
                TAG_PREPARE => {
                    let root = get_root(&mut body)?;
                    let seq_upper = take_u64(&mut body)?;
                    let n = take_u32(&mut body)? as usize;
                    let mut deltas = Vec::with_capacity(n.min(body.len() / 16));
                    for _ in 0..n {
                        deltas.push((PageId::from_raw(take_u64(&mut body)?), take_u64(&mut body)? as i64));
                    }
                    prepared = Some(Prepared { generation, root, seq_upper, deltas });
                }
                TAG_COMMIT => {
                    if let (Some(p), Some(s)) = (prepared.take(), state.as_mut()) {
                        if p.generation == generation && generation > s.generation {
                            apply_deltas(&mut s.refcounts, &p.deltas).ok()?;
                            s.generation = generation;
                            s.root = p.root;
                            s.seq_upper = p.seq_upper;
                        }
                    }
                }
                TAG_SNAPSHOT => {
                    let root = get_root(&mut body)?;
                    let seq_upper = take_u64(&mut body)?;
                    let n = take_u32(&mut body)? as usize;
                    let mut refcounts = HashMap::with_capacity(n.min(body.len() / 12));
                    for _ in 0..n {
                        refcounts.insert(PageId::from_raw(take_u64(&mut body)?), take_u32(&mut body)?);
                    }
                    state = Some(ManifestState { generation, root, seq_upper, refcounts });
                    prepared = None;
                }
                _ => return None,
            }
            Some(())
        })();
        if parsed.is_none() {
            return Err(Error::OpenFailure(format!("malformed manifest record at offset {at}")));
        }
        at += 12 + len;
    }
    let state = state.ok_or_else(|| Error::OpenFailure("manifest holds no snapshot".into()))?;
    Ok((state, at))
}

pub struct Manifest {
    path: PathBuf,
    file: File,
    len: u64,
    sync: bool,
    state: ManifestState,
    prepared: Option<Prepared>,
    stats: Arc<StatsCounters>,
    faults: Option<Arc<FaultInjector>>,
}

impl Manifest {
    pub fn create(path: &Path, sync: bool, stats: Arc<StatsCounters>, faults: Option<Arc<FaultInjector>>) -> Result<Self> {
        let state = ManifestState::default();
        let file = write_image(path, &state, sync, &stats)?;
        let len = file.metadata()?.len();
        Ok(Manifest { path: path.to_path_buf(), file, len, sync, state, prepared: None, stats, faults })
    }

    /// Opens a manifest, recovering the last committed state and rewriting the log as a
    /// single snapshot.
    pub fn open(path: &Path, sync: bool, stats: Arc<StatsCounters>, faults: Option<Arc<FaultInjector>>) -> Result<Self> {
        let mut data = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::OpenFailure(format!("reading manifest: {e}")))?;
        let (state, _) = replay(&data)?;
        let file = write_image(path, &state, sync, &stats)?;
        let len = file.metadata()?.len();
        Ok(Manifest { path: path.to_path_buf(), file, len, sync, state, prepared: None, stats, faults })
    }

    pub fn state(&self) -> &ManifestState {
        &self.state
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn append(&mut self, rec: &[u8], point: CrashPoint) -> Result<()> {
        let at = self.len;
        let file = &self.file;
        guarded_write(self.faults.as_deref(), point, rec, |d| {
            use std::os::unix::fs::FileExt;
            file.write_all_at(d, at)
        })?;
        self.len += rec.len() as u64;
        StatsCounters::add(&self.stats.manifest_bytes_written, rec.len() as u64);
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Phase one: logs the candidate root and the refcount deltas it implies.
    pub fn prepare(&mut self, generation: u64, root: RootDesc, seq_upper: u64, deltas: Vec<(PageId, i64)>) -> Result<()> {
        if generation <= self.state.generation {
            return Err(Error::contract(format!("generation {generation} not after {}", self.state.generation)));
        }
        let mut check = self.state.refcounts.clone();
        apply_deltas(&mut check, &deltas).map_err(|_| Error::contract("refcount deltas go negative"))?;
        let rec = frame(&prepare_body(generation, &root, seq_upper, &deltas));
        self.append(&rec, CrashPoint::ManifestPrepare)?;
        self.prepared = Some(Prepared { generation, root, seq_upper, deltas });
        Ok(())
    }

    /// Phase two: makes the prepared checkpoint the committed one.
    pub fn commit(&mut self, generation: u64) -> Result<()> {
        let p = self.prepared.take().filter(|p| p.generation == generation);
        let p = p.ok_or_else(|| Error::contract(format!("commit of unprepared generation {generation}")))?;
        checkpoint_hit(self.faults.as_deref(), CrashPoint::ManifestCommit)?;
        let mut body = Vec::with_capacity(9);
        body.put_u8(TAG_COMMIT);
        body.put_u64_le(generation);
        self.append(&frame(&body), CrashPoint::ManifestCommit)?;
        apply_deltas(&mut self.state.refcounts, &p.deltas)?;
        self.state.generation = generation;
        self.state.root = p.root;
        self.state.seq_upper = p.seq_upper;
        if self.len > COMPACT_BYTES.max(64 * self.state.refcounts.len() as u64) {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the log as one snapshot of the committed state.
    pub fn compact(&mut self) -> Result<()> {
        self.file = write_image(&self.path, &self.state, self.sync, &self.stats)?;
        self.len = self.file.metadata()?.len();
        Ok(())
    }
}

fn write_image(path: &Path, state: &ManifestState, sync: bool, stats: &StatsCounters) -> Result<File> {
    let mut image = Vec::new();
    image.put_slice(MAGIC);
    image.put_u32_le(VERSION);
    image.put_u32_le(0);
    image.extend_from_slice(&frame(&snapshot_body(state)));
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&image)?;
        if sync {
            f.sync_all()?;
        }
    }
    std::fs::rename(&tmp, path)?;
    if sync {
        if let Some(dir) = path.parent() {
            File::open(dir)?.sync_all()?;
        }
    }
    StatsCounters::add(&stats.manifest_bytes_written, image.len() as u64);
    Ok(OpenOptions::new().read(true).write(true).open(path)?)
}
