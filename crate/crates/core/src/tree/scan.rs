use bytes::Bytes;

use super::{load, Child, LeafRef, Node, Pages, RunRef, Segment, TreeRoot};
use crate::error::Result;
use crate::model::{merge_runs, Key, Payload, Update};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lookup {
    Found(Bytes),
    Deleted,
    Absent,
}

fn from_payload(p: &Payload) -> Lookup {
    match p {
        Payload::Value(v) => Lookup::Found(v.clone()),
        Payload::Tombstone => Lookup::Deleted,
    }
}

fn segment_lookup(pages: &dyn Pages, seg: &Segment, key: &[u8]) -> Result<Option<Lookup>> {
    if key < &seg.first_key[..] || key > &seg.last_key[..] {
        return Ok(None);
    }
    match &seg.run {
        RunRef::Mem(run) => {
            let i = run.lower_bound(key);
            Ok(run
                .entries()
                .get(i)
                .filter(|u| &u.key[..] == key && seg.live.contains(i as u32))
                .map(|u| from_payload(&u.payload)))
        }
        RunRef::Page(id) => Ok(pages.lookup(*id, key)?.filter(|h| seg.live.contains(h.ordinal)).map(|h| match h.value {
            Some(v) => Lookup::Found(v),
            None => Lookup::Deleted,
        })),
    }
}

fn leaf_lookup(pages: &dyn Pages, leaf: &LeafRef, key: &[u8]) -> Result<Lookup> {
    if let Some(f) = leaf.filter {
        if !pages.filter_contains(f, key)? {
            return Ok(Lookup::Absent);
        }
    }
    match &leaf.run {
        RunRef::Mem(run) => {
            let i = run.lower_bound(key);
            Ok(run.entries().get(i).filter(|u| &u.key[..] == key).map_or(Lookup::Absent, |u| from_payload(&u.payload)))
        }
        RunRef::Page(id) => Ok(match pages.leaf_lookup(*id, key)? {
            Some(h) => h.value.map_or(Lookup::Deleted, Lookup::Found),
            None => Lookup::Absent,
        }),
    }
}

/// Walks the root-to-leaf path of `key`, consulting each node's buffer levels newest first.
pub fn point_query(pages: &dyn Pages, tree: &TreeRoot, key: &[u8]) -> Result<Lookup> {
    let mut node: &Node = match tree {
        TreeRoot::Empty => return Ok(Lookup::Absent),
        TreeRoot::Leaf(l) => return leaf_lookup(pages, l, key),
        TreeRoot::Node(n) => n,
    };
    loop {
        for level in &node.levels {
            for seg in level {
                if let Some(hit) = segment_lookup(pages, seg, key)? {
                    return Ok(hit);
                }
            }
        }
        match &node.children[node.pivot_for(key)] {
            Child::Leaf(l) => return leaf_lookup(pages, l, key),
            Child::Node(n) => node = n,
        }
    }
}

fn narrow<'a>(run: &'a [Update], lo: Option<&Key>, hi: Option<&Key>) -> &'a [Update] {
    let a = lo.map_or(0, |k| run.partition_point(|u| u.key < *k));
    let b = hi.map_or(run.len(), |k| run.partition_point(|u| u.key < *k));
    &run[a..b.max(a)]
}

struct Scan<'p> {
    pages: &'p dyn Pages,
    start: Key,
    limit: usize,
    out: Vec<(Key, Bytes)>,
}

impl Scan<'_> {
    fn done(&self) -> bool {
        self.out.len() >= self.limit
    }

    fn leaf(&mut self, leaf: &LeafRef, lo: Option<&Key>, hi: Option<&Key>, srcs: &[&[Update]]) -> Result<()> {
        let run = load(self.pages, &leaf.run)?;
        let mut all: Vec<&[Update]> = srcs.to_vec();
        all.push(narrow(run.entries(), lo, hi));
        for u in merge_runs(&all, true)? {
            if self.done() {
                break;
            }
            if let Payload::Value(v) = u.payload {
                self.out.push((u.key, v));
            }
        }
        Ok(())
    }

    fn node(&mut self, node: &Node, srcs: &[&[Update]]) -> Result<()> {
        let first = node.pivot_for(&self.start);
        for p in first..node.pivot_count() {
            let (lo, hi) = node.bounds(p);
            let lo = if p == first { Some(&self.start) } else { lo };
            let lo = lo.cloned();
            let mut mine = Vec::new();
            for level in &node.levels {
                let mut entries = Vec::new();
                for seg in level.iter().filter(|s| s.overlaps(lo.as_ref(), hi)) {
                    let run = load(self.pages, &seg.run)?;
                    let (a, b) = run.key_range(lo.as_ref(), hi);
                    for r in seg.live.clip(a as u32, b as u32).ranges() {
                        entries.extend_from_slice(&run.entries()[r.start as usize..r.end as usize]);
                    }
                }
                mine.push(entries);
            }
            let child_srcs: Vec<&[Update]> = srcs
                .iter()
                .map(|s| narrow(s, lo.as_ref(), hi))
                .chain(mine.iter().map(Vec::as_slice))
                .filter(|s| !s.is_empty())
                .collect();
            match &node.children[p] {
                Child::Leaf(l) => self.leaf(l, lo.as_ref(), hi, &child_srcs)?,
                Child::Node(n) => self.node(n, &child_srcs)?,
            }
            if self.done() {
                break;
            }
        }
        Ok(())
    }
}

/// The first `limit` live pairs with keys `>= start`, merging leaves with every buffered
/// update on the way down (newer nodes and levels win).
pub fn range_scan(pages: &dyn Pages, tree: &TreeRoot, start: &Key, limit: usize) -> Result<Vec<(Key, Bytes)>> {
    let mut scan = Scan { pages, start: start.clone(), limit, out: Vec::new() };
    if limit == 0 {
        return Ok(scan.out);
    }
    match tree {
        TreeRoot::Empty => {}
        TreeRoot::Leaf(l) => scan.leaf(l, Some(start), None, &[])?,
        TreeRoot::Node(n) => scan.node(n, &[])?,
    }
    Ok(scan.out)
}
