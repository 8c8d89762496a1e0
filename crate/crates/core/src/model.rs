//! Keys, updates, batches and sorted-run merging.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::Deref;

use bytes::Bytes;

use crate::error::{Error, Result};

pub const MAX_KEY_BYTES: usize = 1024;

/// Fixed per-entry cost in page encodings: key length (2), op tag (1), seq (8), value offset (4)
/// and value length (4).
pub const ENTRY_OVERHEAD: usize = 19;

/// A byte-string key ordered lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key(Bytes);

impl Key {
    pub fn new(bytes: impl Into<Bytes>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() || bytes.len() > MAX_KEY_BYTES {
            return Err(Error::InvalidArgument(format!(
                "key length {} outside 1..={MAX_KEY_BYTES}",
                bytes.len()
            )));
        }
        Ok(Key(bytes))
    }

    /// Wraps bytes already known to be a valid key (decoded pages, tests).
    pub fn from_bytes(bytes: Bytes) -> Self {
        debug_assert!(!bytes.is_empty() && bytes.len() <= MAX_KEY_BYTES);
        Key(bytes)
    }

    pub fn bytes(&self) -> &Bytes {
        &self.0
    }
}

impl Deref for Key {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl std::borrow::Borrow<[u8]> for Key {
    fn borrow(&self) -> &[u8] {
        &self.0
    }
}

impl From<&'static str> for Key {
    fn from(s: &'static str) -> Self {
        Key::from_bytes(Bytes::from_static(s.as_bytes()))
    }
}

impl From<Vec<u8>> for Key {
    fn from(v: Vec<u8>) -> Self {
        Key::from_bytes(Bytes::from(v))
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "{s:?}"),
            Err(_) => write!(f, "{:02x?}", &self.0[..]),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Payload {
    Value(Bytes),
    Tombstone,
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Value(v) => v.len(),
            Payload::Tombstone => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_tombstone(&self) -> bool {
        matches!(self, Payload::Tombstone)
    }

    pub fn value(&self) -> Option<&Bytes> {
        match self {
            Payload::Value(v) => Some(v),
            Payload::Tombstone => None,
        }
    }
}

/// A single keyed edit stamped with its sequence number.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Update {
    pub key: Key,
    pub payload: Payload,
    pub seq: u64,
}

impl Update {
    pub fn put(key: impl Into<Key>, value: impl Into<Bytes>, seq: u64) -> Self {
        Update { key: key.into(), payload: Payload::Value(value.into()), seq }
    }

    pub fn delete(key: impl Into<Key>, seq: u64) -> Self {
        Update { key: key.into(), payload: Payload::Tombstone, seq }
    }

    /// Bytes this entry occupies in a page.
    pub fn encoded_len(&self) -> usize {
        ENTRY_OVERHEAD + self.key.len() + self.payload.len()
    }
}

pub fn run_bytes(run: &[Update]) -> u64 {
    run.iter().map(|u| u.encoded_len() as u64).sum()
}

/// A key-sorted, duplicate-free run of updates.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Batch {
    entries: Vec<Update>,
}

impl Batch {
    /// Wraps entries that are already strictly ascending by key.
    pub fn from_sorted(entries: Vec<Update>) -> Result<Self> {
        check_sorted(&entries)?;
        Ok(Batch { entries })
    }

    pub fn entries(&self) -> &[Update] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Update> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encoded_len(&self) -> u64 {
        run_bytes(&self.entries)
    }

    pub fn max_seq(&self) -> u64 {
        self.entries.iter().map(|u| u.seq).max().unwrap_or(0)
    }

    /// Splits into consecutive chunks of at most `limit` encoded bytes each.
    pub fn chunks(self, limit: usize) -> Vec<Batch> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        let mut cur_bytes = 0;
        for u in self.entries {
            let n = u.encoded_len();
            if !cur.is_empty() && cur_bytes + n > limit {
                out.push(Batch { entries: std::mem::take(&mut cur) });
                cur_bytes = 0;
            }
            cur_bytes += n;
            cur.push(u);
        }
        if !cur.is_empty() {
            out.push(Batch { entries: cur });
        }
        out
    }
}

pub(crate) fn check_sorted(run: &[Update]) -> Result<()> {
    match run.windows(2).position(|w| w[0].key >= w[1].key) {
        None => Ok(()),
        Some(i) => Err(Error::contract(format!(
            "run not strictly ascending at index {}: {:?} then {:?}",
            i,
            run[i].key,
            run[i + 1].key
        ))),
    }
}

/// Sorts and de-duplicates updates; for each key the update with the highest seq survives.
/// Tombstones survive too.
pub fn make_batch(mut updates: Vec<Update>) -> Result<Batch> {
    if updates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    updates.sort_by(|a, b| a.key.cmp(&b.key).then(b.seq.cmp(&a.seq)));
    updates.dedup_by(|later, kept| later.key == kept.key);
    Ok(Batch { entries: updates })
}

struct HeapItem<'a> {
    key: &'a Key,
    seq: u64,
    rank: usize,
    pos: usize,
}

impl PartialEq for HeapItem<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem<'_> {}
impl PartialOrd for HeapItem<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem<'_> {
    // Smallest key first; among equal keys the newest run, then the highest seq.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp(other.key)
            .then(self.rank.cmp(&other.rank))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Merges key-sorted runs ordered newest first (index 0 is the most recent).
///
/// For every key the entry from the newest run wins. With `drop_tombstones`, winning
/// tombstones are omitted from the output.
pub fn merge_runs(runs: &[&[Update]], drop_tombstones: bool) -> Result<Vec<Update>> {
    for run in runs {
        check_sorted(run)?;
    }
    let total: usize = runs.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(total);
    match runs.len() {
        0 => return Ok(out),
        1 => {
            out.extend(runs[0].iter().filter(|u| !(drop_tombstones && u.payload.is_tombstone())).cloned());
            return Ok(out);
        }
        _ => {}
    }
    let mut heap = BinaryHeap::with_capacity(runs.len());
    for (rank, run) in runs.iter().enumerate() {
        if let Some(first) = run.first() {
            heap.push(Reverse(HeapItem { key: &first.key, seq: first.seq, rank, pos: 0 }));
        }
    }
    let mut last: Option<&Key> = None;
    while let Some(Reverse(item)) = heap.pop() {
        let run = runs[item.rank];
        let u = &run[item.pos];
        if last != Some(item.key) {
            last = Some(item.key);
            if !(drop_tombstones && u.payload.is_tombstone()) {
                out.push(u.clone());
            }
        }
        if let Some(next) = run.get(item.pos + 1) {
            heap.push(Reverse(HeapItem { key: &next.key, seq: next.seq, rank: item.rank, pos: item.pos + 1 }));
        }
    }
    Ok(out)
}

/// Cut points splitting `run` into at most `parts` contiguous pieces of roughly equal byte size.
/// Returned ranges are non-empty and cover the run.
pub(crate) fn balanced_ranges(run: &[Update], parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, run.len().max(1));
    if run.is_empty() {
        return Vec::new();
    }
    let total = run_bytes(run);
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    let mut acc = 0u64;
    let mut j = 1;
    for (i, u) in run.iter().enumerate() {
        acc += u.encoded_len() as u64;
        // Close piece j once the running total reaches j/parts of the bytes.
        if j < parts && acc * parts as u64 >= total * j as u64 && i + 1 < run.len() {
            ranges.push(start..i + 1);
            start = i + 1;
            j += 1;
        }
    }
    ranges.push(start..run.len());
    ranges
}
