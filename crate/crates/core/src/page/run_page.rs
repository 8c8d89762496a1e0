//! On-disk layout shared by leaves and buffer segments.
//!
//! ```text
//! [0, 64)                 header
//! [64, index_region)      sparse index: every k-th key with its ordinal and key-area offset
//! [keys_off, vals_off)    key area: per entry {key_len u16, op u8, seq u64, val_off u32, val_len u32, key}
//! [vals_off, ..)          value area
//! ```
//!
//! Keys and values live in separate regions so a point lookup reads the index shard, one
//! key-group span and (only when the value is wanted) one value span.

use bytes::{Buf, BufMut, Bytes};

use super::{CacheClass, PageId, PageStore};
use crate::error::{Error, Result};
use crate::model::{Key, Payload, Update, ENTRY_OVERHEAD};

const MAGIC: &[u8; 4] = b"TRUN";
const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 64;
const OP_DELETE: u8 = 0;
const OP_PUT: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Leaf = 0,
    Segment = 1,
}

/// Every `stride`-th key of a run with its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseIndex {
    pub stride: usize,
    pub keys: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: Key,
    pub ordinal: u32,
    /// Offset of the entry within the key area.
    pub offset: u32,
}

impl SparseIndex {
    fn encoded_len(&self) -> usize {
        self.keys.iter().map(|e| 10 + e.key.len()).sum()
    }

    /// Group `g` such that `keys[g].key <= key < keys[g+1].key`, or `None` if `key` sorts
    /// before the first indexed key.
    pub fn group_for(&self, key: &[u8]) -> Option<usize> {
        let after = self.keys.partition_point(|e| &e.key[..] <= key);
        after.checked_sub(1)
    }
}

fn key_entry_len(u: &Update) -> usize {
    ENTRY_OVERHEAD + u.key.len()
}

/// Builds the sparse index over `entries` with stride 16, falling back to 32 (and coarser)
/// when the index does not fit in `space` bytes.
pub fn build_leaf_index(entries: &[Update], space: usize) -> SparseIndex {
    let mut offsets = Vec::with_capacity(entries.len());
    let mut off = 0u32;
    for u in entries {
        offsets.push(off);
        off += key_entry_len(u) as u32;
    }
    let mut stride = 16;
    loop {
        let keys = (0..entries.len())
            .step_by(stride)
            .map(|i| IndexEntry { key: entries[i].key.clone(), ordinal: i as u32, offset: offsets[i] })
            .collect();
        let index = SparseIndex { stride, keys };
        if index.encoded_len() <= space || stride >= entries.len().max(1) {
            return index;
        }
        stride *= 2;
    }
}

/// Serializes a sorted run into a `page_bytes` page whose first `index_region` bytes hold the
/// header and sparse index.
pub fn encode_run(entries: &[Update], kind: RunKind, page_bytes: usize, index_region: usize) -> Result<Vec<u8>> {
    let index = build_leaf_index(entries, index_region - HEADER_BYTES);
    if index.encoded_len() > index_region - HEADER_BYTES {
        return Err(Error::contract("sparse index does not fit its region"));
    }
    let keys_len: usize = entries.iter().map(key_entry_len).sum();
    let vals_len: usize = entries.iter().map(|u| u.payload.len()).sum();
    let keys_off = index_region;
    let vals_off = keys_off + keys_len;
    if vals_off + vals_len > page_bytes {
        return Err(Error::contract(format!(
            "run of {} entry bytes exceeds {}-byte page",
            keys_len + vals_len,
            page_bytes
        )));
    }
    let mut page = Vec::with_capacity(page_bytes);
    page.put_slice(MAGIC);
    page.put_u8(VERSION);
    page.put_u8(kind as u8);
    page.put_u16_le(index.stride as u16);
    page.put_u32_le(entries.len() as u32);
    page.put_u32_le(index.keys.len() as u32);
    page.put_u32_le(index.encoded_len() as u32);
    page.put_u32_le(keys_off as u32);
    page.put_u32_le(keys_len as u32);
    page.put_u32_le(vals_off as u32);
    page.put_u32_le(vals_len as u32);
    page.resize(HEADER_BYTES, 0);
    for e in &index.keys {
        page.put_u16_le(e.key.len() as u16);
        page.put_slice(&e.key);
        page.put_u32_le(e.ordinal);
        page.put_u32_le(e.offset);
    }
    page.resize(keys_off, 0);
    let mut val_off = 0u32;
    for u in entries {
        page.put_u16_le(u.key.len() as u16);
        page.put_u8(if u.payload.is_tombstone() { OP_DELETE } else { OP_PUT });
        page.put_u64_le(u.seq);
        page.put_u32_le(val_off);
        page.put_u32_le(u.payload.len() as u32);
        page.put_slice(&u.key);
        val_off += u.payload.len() as u32;
    }
    for u in entries {
        if let Payload::Value(v) = &u.payload {
            page.put_slice(v);
        }
    }
    page.resize(page_bytes, 0);
    Ok(page)
}

#[derive(Clone, Copy, Debug)]
struct Header {
    kind: u8,
    count: u32,
    index_count: u32,
    index_bytes: u32,
    keys_off: u32,
    keys_len: u32,
    vals_off: u32,
}

fn parse_header(mut b: &[u8]) -> Result<Header> {
    if b.len() < HEADER_BYTES || &b[..4] != MAGIC || b[4] != VERSION {
        return Err(Error::corrupt("bad run page header"));
    }
    b.advance(5);
    let kind = b.get_u8();
    let _stride = b.get_u16_le();
    Ok(Header {
        kind,
        count: b.get_u32_le(),
        index_count: b.get_u32_le(),
        index_bytes: b.get_u32_le(),
        keys_off: b.get_u32_le(),
        keys_len: b.get_u32_le(),
        vals_off: b.get_u32_le(),
    })
}

fn parse_index(region: &Bytes, h: &Header) -> Result<Vec<IndexEntry>> {
    let end = HEADER_BYTES + h.index_bytes as usize;
    if end > region.len() {
        return Err(Error::corrupt("sparse index overruns its region"));
    }
    let mut b = region.slice(HEADER_BYTES..end);
    let mut out = Vec::with_capacity(h.index_count as usize);
    for _ in 0..h.index_count {
        if b.remaining() < 2 {
            return Err(Error::corrupt("truncated sparse index"));
        }
        let klen = b.get_u16_le() as usize;
        if b.remaining() < klen + 8 {
            return Err(Error::corrupt("truncated sparse index"));
        }
        let key = Key::from_bytes(b.split_to(klen));
        out.push(IndexEntry { key, ordinal: b.get_u32_le(), offset: b.get_u32_le() });
    }
    Ok(out)
}

struct KeyRecord {
    key: Bytes,
    tombstone: bool,
    seq: u64,
    val_off: u32,
    val_len: u32,
}

fn next_key_record(b: &mut Bytes) -> Result<KeyRecord> {
    if b.remaining() < ENTRY_OVERHEAD {
        return Err(Error::corrupt("truncated key record"));
    }
    let klen = b.get_u16_le() as usize;
    let op = b.get_u8();
    let seq = b.get_u64_le();
    let val_off = b.get_u32_le();
    let val_len = b.get_u32_le();
    if b.remaining() < klen || klen == 0 || op > OP_PUT {
        return Err(Error::corrupt("malformed key record"));
    }
    Ok(KeyRecord { key: b.split_to(klen), tombstone: op == OP_DELETE, seq, val_off, val_len })
}

/// Decodes a whole run page. Keys and values are zero-copy slices of `page`.
pub fn decode_run(page: &Bytes) -> Result<(RunKind, Vec<Update>)> {
    let h = parse_header(page)?;
    let kind = match h.kind {
        0 => RunKind::Leaf,
        1 => RunKind::Segment,
        _ => return Err(Error::corrupt("unknown run kind")),
    };
    let keys_end = (h.keys_off + h.keys_len) as usize;
    if keys_end > page.len() {
        return Err(Error::corrupt("key area overruns page"));
    }
    let mut keys = page.slice(h.keys_off as usize..keys_end);
    let mut out = Vec::with_capacity(h.count as usize);
    for _ in 0..h.count {
        let r = next_key_record(&mut keys)?;
        let payload = if r.tombstone {
            Payload::Tombstone
        } else {
            let start = h.vals_off as usize + r.val_off as usize;
            let end = start + r.val_len as usize;
            if end > page.len() {
                return Err(Error::corrupt("value overruns page"));
            }
            Payload::Value(page.slice(start..end))
        };
        out.push(Update { key: Key::from_bytes(r.key), payload, seq: r.seq });
    }
    Ok((kind, out))
}

/// Result of a sharded point lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageHit {
    pub ordinal: u32,
    pub seq: u64,
    /// `None` for tombstones; for presence-only lookups an empty value is returned.
    pub value: Option<Bytes>,
}

/// Looks up `key` in a stored run reading only the shards needed: the index region, the key
/// group holding `key`, and the value span when `want_value` is set.
pub fn lookup(store: &PageStore, id: PageId, index_region: usize, key: &[u8], want_value: bool, class: CacheClass) -> Result<Option<PageHit>> {
    lookup_counted(store, id, index_region, key, want_value, class).map(|(h, _)| h)
}

/// [`lookup`] that also reports the shard bytes it touched.
pub fn lookup_counted(
    store: &PageStore,
    id: PageId,
    index_region: usize,
    key: &[u8],
    want_value: bool,
    class: CacheClass,
) -> Result<(Option<PageHit>, u64)> {
    let mut touched = 0;
    let mut read = |a: usize, b: usize| -> Result<Bytes> {
        let (bytes, n) = store.read_range_counted(id, a, b, class)?;
        touched += n;
        Ok(bytes)
    };
    let hit = lookup_with(&mut read, key, want_value, index_region)?;
    Ok((hit, touched))
}

fn lookup_with(read: &mut dyn FnMut(usize, usize) -> Result<Bytes>, key: &[u8], want_value: bool, index_region: usize) -> Result<Option<PageHit>> {
    let head = read(0, index_region)?;
    let h = parse_header(&head)?;
    if h.count == 0 {
        return Ok(None);
    }
    let index = parse_index(&head, &h)?;
    let Some(g) = SparseIndex { stride: 0, keys: index.clone() }.group_for(key) else {
        return Ok(None);
    };
    let start = index[g].offset as usize;
    let end = index.get(g + 1).map_or(h.keys_len as usize, |e| e.offset as usize);
    let group_len = index.get(g + 1).map_or(h.count, |e| e.ordinal) - index[g].ordinal;
    let base = h.keys_off as usize;
    let mut group = read(base + start, base + end)?;
    for i in 0..group_len {
        let r = next_key_record(&mut group)?;
        match r.key[..].cmp(key) {
            std::cmp::Ordering::Less => continue,
            std::cmp::Ordering::Greater => return Ok(None),
            std::cmp::Ordering::Equal => {}
        }
        let ordinal = index[g].ordinal + i;
        let value = if r.tombstone {
            None
        } else if want_value && r.val_len > 0 {
            let vs = h.vals_off as usize + r.val_off as usize;
            Some(read(vs, vs + r.val_len as usize)?)
        } else {
            Some(Bytes::new())
        };
        return Ok(Some(PageHit { ordinal, seq: r.seq, value }));
    }
    Ok(None)
}
