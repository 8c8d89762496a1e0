//! In-memory ordered index of recent updates and the stack of finalized tables.

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::SeqCst};
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::model::{make_batch, Batch, Key, Payload, Update};

#[derive(Default)]
pub struct MemTable {
    map: RwLock<BTreeMap<Key, (Payload, u64)>>,
    bytes: AtomicU64,
    finalized: AtomicBool,
}

/// Outcome of consulting memtables for one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemLookup {
    Found(Bytes),
    Deleted,
    Fallthrough,
}

impl MemTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Upserts `u` unless the table already holds a newer update for the key.
    pub fn insert(&self, u: Update) -> Result<()> {
        let mut map = self.map.write();
        if self.finalized.load(SeqCst) {
            return Err(Error::contract("insert into a finalized memtable"));
        }
        let size = u.encoded_len() as u64;
        match map.get_mut(&u.key) {
            Some(old) if old.1 >= u.seq => {}
            Some(old) => {
                let old_size = (u.key.len() + 19 + old.0.len()) as u64;
                self.bytes.fetch_add(size, SeqCst);
                self.bytes.fetch_sub(old_size, SeqCst);
                *old = (u.payload, u.seq);
            }
            None => {
                self.bytes.fetch_add(size, SeqCst);
                map.insert(u.key, (u.payload, u.seq));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Option<(Payload, u64)> {
        self.map.read().get(key).cloned()
    }

    /// Up to `limit` entries with keys `>= start`, tombstones included.
    pub fn range(&self, start: &[u8], limit: usize) -> Vec<Update> {
        self.map
            .read()
            .range::<[u8], _>((Bound::Included(start), Bound::Unbounded))
            .take(limit)
            .map(|(k, (p, s))| Update { key: k.clone(), payload: p.clone(), seq: *s })
            .collect()
    }

    /// Encoded bytes of the live entries.
    pub fn bytes(&self) -> u64 {
        self.bytes.load(SeqCst)
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized.load(SeqCst)
    }

    /// Freezes the table and returns its contents as a batch; `None` when it is empty.
    pub fn finalize(&self) -> Result<Option<Batch>> {
        let map = self.map.write();
        if self.finalized.swap(true, SeqCst) {
            return Err(Error::contract("memtable finalized twice"));
        }
        if map.is_empty() {
            return Ok(None);
        }
        let entries = map.iter().map(|(k, (p, s))| Update { key: k.clone(), payload: p.clone(), seq: *s }).collect();
        make_batch(entries).map(Some)
    }
}

/// Consults the active table, then finalized tables newest first.
pub fn stack_get(active: &MemTable, deltas: &[Arc<MemTable>], key: &[u8]) -> MemLookup {
    std::iter::once(active)
        .chain(deltas.iter().map(|d| &**d))
        .find_map(|t| t.get(key))
        .map_or(MemLookup::Fallthrough, |(p, _)| match p {
            Payload::Value(v) => MemLookup::Found(v),
            Payload::Tombstone => MemLookup::Deleted,
        })
}
