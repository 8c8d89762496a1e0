//! Node page encoding. Every child and segment must already be durable.

use std::sync::Arc;

use bytes::{Buf, BufMut, Bytes};
use xxhash_rust::xxh3::xxh3_64;

use super::{Child, LeafRef, Live, Node, RunRef, Segment};
use crate::error::{Error, Result};
use crate::model::Key;
use crate::page::PageId;

const MAGIC: &[u8; 4] = b"TNOD";
const VERSION: u32 = 1;

fn put_key(out: &mut Vec<u8>, k: &Key) {
    out.put_u16_le(k.len() as u16);
    out.put_slice(k);
}

fn page_of(r: &RunRef) -> Result<PageId> {
    r.page().ok_or_else(|| Error::contract("encoding a node that references an unwritten run"))
}

/// Serialized node, without padding. Layout: magic, version, body length, body, xxh3 of body.
pub fn encode_node(node: &Node) -> Result<Vec<u8>> {
    let mut b = Vec::with_capacity(1024);
    b.put_u32_le(node.height);
    b.put_u32_le(node.children.len() as u32);
    b.put_u32_le(node.levels.len() as u32);
    for k in &node.keys {
        put_key(&mut b, k);
    }
    for c in &node.children {
        match c {
            Child::Leaf(l) => {
                b.put_u8(0);
                b.put_u64_le(page_of(&l.run)?.raw());
                match l.filter {
                    Some(f) => {
                        b.put_u8(1);
                        b.put_u64_le(f.raw());
                    }
                    None => b.put_u8(0),
                }
                b.put_u64_le(l.bytes);
            }
            Child::Node(n) => {
                b.put_u8(1);
                b.put_u64_le(n.page.ok_or_else(|| Error::contract("encoding a node with an unwritten child"))?.raw());
            }
        }
    }
    for p in &node.pending {
        b.put_u64_le(*p);
    }
    for level in &node.levels {
        b.put_u32_le(level.len() as u32);
        for s in level {
            b.put_u64_le(page_of(&s.run)?.raw());
            b.put_u32_le(s.count);
            put_key(&mut b, &s.first_key);
            put_key(&mut b, &s.last_key);
            b.put_u32_le(s.live.ranges().len() as u32);
            for r in s.live.ranges() {
                b.put_u32_le(r.start);
                b.put_u32_le(r.end);
            }
        }
    }
    let mut out = Vec::with_capacity(b.len() + 20);
    out.put_slice(MAGIC);
    out.put_u32_le(VERSION);
    out.put_u32_le(b.len() as u32);
    out.put_u64_le(xxh3_64(&b));
    out.extend_from_slice(&b);
    Ok(out)
}

struct Reader(Bytes);

impl Reader {
    fn need(&self, n: usize) -> Result<()> {
        if self.0.remaining() < n {
            Err(Error::corrupt("truncated node page"))
        } else {
            Ok(())
        }
    }
    fn u8(&mut self) -> Result<u8> {
        self.need(1)?;
        Ok(self.0.get_u8())
    }
    fn u32(&mut self) -> Result<u32> {
        self.need(4)?;
        Ok(self.0.get_u32_le())
    }
    fn u64(&mut self) -> Result<u64> {
        self.need(8)?;
        Ok(self.0.get_u64_le())
    }
    fn key(&mut self) -> Result<Key> {
        let n = self.u32_16()?;
        self.need(n)?;
        Key::new(self.0.split_to(n))
    }
    fn u32_16(&mut self) -> Result<usize> {
        self.need(2)?;
        Ok(self.0.get_u16_le() as usize)
    }
}

/// Decodes a node page; child nodes are resolved through `child`.
pub fn decode_node(page: &Bytes, child: &mut dyn FnMut(PageId) -> Result<Arc<Node>>) -> Result<Node> {
    if page.len() < 20 || &page[..4] != MAGIC {
        return Err(Error::corrupt("bad node page magic"));
    }
    let mut h = &page[4..20];
    if h.get_u32_le() != VERSION {
        return Err(Error::corrupt("unsupported node page version"));
    }
    let len = h.get_u32_le() as usize;
    let sum = h.get_u64_le();
    if 20 + len > page.len() {
        return Err(Error::corrupt("node body overruns page"));
    }
    let body = page.slice(20..20 + len);
    if xxh3_64(&body) != sum {
        return Err(Error::corrupt("node page checksum mismatch"));
    }
    let mut r = Reader(body);
    let height = r.u32()?;
    let n = r.u32()? as usize;
    let nlevels = r.u32()? as usize;
    if n == 0 || n > 4096 || nlevels > 64 {
        return Err(Error::corrupt("implausible node shape"));
    }
    let keys = (0..n - 1).map(|_| r.key()).collect::<Result<Vec<_>>>()?;
    let mut children = Vec::with_capacity(n);
    for _ in 0..n {
        children.push(match r.u8()? {
            0 => {
                let run = RunRef::Page(PageId::from_raw(r.u64()?));
                let filter = match r.u8()? {
                    0 => None,
                    _ => Some(PageId::from_raw(r.u64()?)),
                };
                Child::Leaf(LeafRef { run, filter, bytes: r.u64()? })
            }
            1 => Child::Node(child(PageId::from_raw(r.u64()?))?),
            _ => return Err(Error::corrupt("bad child tag")),
        });
    }
    let pending = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::with_capacity(nlevels);
    for _ in 0..nlevels {
        let count = r.u32()? as usize;
        let mut segs = Vec::with_capacity(count);
        for _ in 0..count {
            let run = RunRef::Page(PageId::from_raw(r.u64()?));
            let count = r.u32()?;
            let first_key = r.key()?;
            let last_key = r.key()?;
            let nr = r.u32()? as usize;
            let ranges = (0..nr).map(|_| Ok(r.u32()?..r.u32()?)).collect::<Result<Vec<_>>>()?;
            segs.push(Segment { run, count, first_key, last_key, live: Live::from_ranges(ranges) });
        }
        levels.push(segs);
    }
    Ok(Node { keys, children, pending, levels, height, page: None })
}

/// Pages a durable node references: child nodes, leaves, filters and segments.
pub fn node_refs(node: &Node) -> Vec<PageId> {
    let mut out = Vec::new();
    for c in &node.children {
        match c {
            Child::Leaf(l) => {
                out.extend(l.run.page());
                out.extend(l.filter);
            }
            Child::Node(n) => out.extend(n.page),
        }
    }
    for s in node.levels.iter().flatten() {
        out.extend(s.run.page());
    }
    out
}
