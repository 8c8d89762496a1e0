//! Buffer operations on a single node.

use std::sync::Arc;

use super::{load, Live, Node, Pages, Run, Segment};
use crate::config::TreeConfig;
use crate::error::{Error, Result};
use crate::model::{balanced_ranges, merge_runs, run_bytes, Key, Update};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The merged run settled in this level.
    Placed(usize),
    /// No vacant level could absorb the cascade, or a part exceeded the leaf budget. The node
    /// is unchanged; the caller must flush and retry.
    Full,
}

/// Appends the entries of `run` selected by `live`, in key order.
fn live_entries(run: &Run, live: &Live, out: &mut Vec<Update>) {
    for r in live.ranges() {
        out.extend_from_slice(&run.entries()[r.start as usize..r.end as usize]);
    }
}

fn live_bytes(run: &Run, live: &Live) -> u64 {
    live.ranges().iter().map(|r| run.range_bytes(r.start as usize, r.end as usize)).sum()
}

/// Adds the encoded size of each entry of a sorted run to its pivot's counter.
fn add_by_pivot(node: &Node, entries: &[Update], sign: i64, acc: &mut [i64]) {
    let mut p = 0;
    for u in entries {
        while p < node.keys.len() && u.key >= node.keys[p] {
            p += 1;
        }
        acc[p] += sign * u.encoded_len() as i64;
    }
}

fn apply_pending(node: &mut Node, delta: &[i64]) -> Result<()> {
    for (p, d) in node.pending.iter_mut().zip(delta) {
        let v = *p as i64 + d;
        if v < 0 {
            return Err(Error::contract("pending bytes went negative"));
        }
        *p = v as u64;
    }
    Ok(())
}

/// Merges `incoming` (newest) with the live contents of each occupied level from `from`
/// downward until a vacant level absorbs the result, split into byte-balanced segments.
pub(crate) fn cascade(cfg: &TreeConfig, pages: &dyn Pages, node: &mut Node, incoming: Vec<Update>, from: usize) -> Result<InsertOutcome> {
    let mut delta = vec![0i64; node.pivot_count()];
    let mut merged = incoming;
    let mut target = None;
    for i in from..node.levels.len() {
        if node.levels[i].is_empty() && !merged.is_empty() {
            target = Some(i);
            break;
        }
        let mut older = Vec::new();
        for seg in &node.levels[i] {
            let run = load(pages, &seg.run)?;
            live_entries(&run, &seg.live, &mut older);
        }
        add_by_pivot(node, &older, -1, &mut delta);
        merged = if merged.is_empty() { older } else { merge_runs(&[&merged, &older], false)? };
    }
    let Some(t) = target else { return Ok(InsertOutcome::Full) };
    let ranges = balanced_ranges(&merged, cfg.level_capacity(t));
    if ranges.iter().any(|r| run_bytes(&merged[r.clone()]) > cfg.leaf_bytes as u64) {
        return Ok(InsertOutcome::Full);
    }
    add_by_pivot(node, &merged, 1, &mut delta);
    apply_pending(node, &delta)?;
    for level in &mut node.levels[from..t] {
        level.clear();
    }
    node.levels[t] = ranges.into_iter().map(|r| Segment::new(Arc::new(Run::new(merged[r].to_vec())))).collect();
    node.page = None;
    Ok(InsertOutcome::Placed(t))
}

/// Inserts a batch of at most L bytes into the node buffer.
pub fn buffer_insert(cfg: &TreeConfig, pages: &dyn Pages, node: &mut Node, batch: Vec<Update>) -> Result<InsertOutcome> {
    if batch.is_empty() {
        return Ok(InsertOutcome::Placed(0));
    }
    if run_bytes(&batch) > cfg.leaf_bytes as u64 {
        return Err(Error::contract("batch larger than the leaf budget"));
    }
    cascade(cfg, pages, node, batch, 0)
}

/// Moves an over-full level down by merging it into the levels below.
pub(crate) fn push_down(cfg: &TreeConfig, pages: &dyn Pages, node: &mut Node, level: usize) -> Result<InsertOutcome> {
    cascade(cfg, pages, node, Vec::new(), level)
}

/// Pivot with the most pending bytes, if that is at least `leaf_bytes`. Ties go to the lowest index.
pub fn select_flush_pivot(node: &Node, leaf_bytes: usize) -> Option<usize> {
    max_pending(node).filter(|&p| node.pending[p] >= leaf_bytes as u64)
}

pub(crate) fn max_pending(node: &Node) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (p, &b) in node.pending.iter().enumerate() {
        if best.is_none_or(|q| b > node.pending[q]) {
            best = Some(p);
        }
    }
    best.filter(|&p| node.pending[p] > 0)
}

/// Removes up to `limit` bytes of merged, newest-wins updates addressed to pivot `p`.
///
/// Every buffered entry with a key up to the last extracted key is consumed, including older
/// versions shadowed by the extracted one. Segment runs are never rewritten; only their live
/// intervals shrink, and segments with nothing live are dropped.
pub fn extract_flush_batch(pages: &dyn Pages, node: &mut Node, p: usize, limit: usize) -> Result<Vec<Update>> {
    if p >= node.pivot_count() {
        return Err(Error::contract(format!("pivot {p} out of range ({} pivots)", node.pivot_count())));
    }
    let (lo, hi) = node.bounds(p);
    let (lo, hi) = (lo.cloned(), hi.cloned());
    struct Touched {
        level: usize,
        seg: usize,
        run: Arc<Run>,
        a: usize,
        b: usize,
    }
    let mut touched = Vec::new();
    let mut per_level: Vec<Vec<Update>> = Vec::new();
    for (li, level) in node.levels.iter().enumerate() {
        let mut entries = Vec::new();
        for (si, seg) in level.iter().enumerate() {
            if !seg.overlaps(lo.as_ref(), hi.as_ref()) {
                continue;
            }
            let run = load(pages, &seg.run)?;
            let (a, b) = run.key_range(lo.as_ref(), hi.as_ref());
            let clip = seg.live.clip(a as u32, b as u32);
            if clip.is_empty() {
                continue;
            }
            live_entries(&run, &clip, &mut entries);
            touched.push(Touched { level: li, seg: si, run, a, b });
        }
        if !entries.is_empty() {
            per_level.push(entries);
        }
    }
    let sources: Vec<&[Update]> = per_level.iter().map(Vec::as_slice).collect();
    let mut merged = merge_runs(&sources, false)?;
    let mut acc = 0u64;
    let take = merged
        .iter()
        .position(|u| {
            acc += u.encoded_len() as u64;
            acc > limit as u64
        })
        .unwrap_or(merged.len())
        .max(1)
        .min(merged.len());
    merged.truncate(take);
    let Some(last) = merged.last().map(|u| u.key.clone()) else {
        return Ok(merged);
    };
    let mut consumed = 0u64;
    for t in &touched {
        let cut = t.a + t.run.entries()[t.a..t.b].partition_point(|u| u.key <= last);
        let seg = &mut node.levels[t.level][t.seg];
        let gone = seg.live.clip(t.a as u32, cut as u32);
        consumed += live_bytes(&t.run, &gone);
        seg.live = seg.live.remove(t.a as u32, cut as u32);
    }
    for level in &mut node.levels {
        level.retain(|s| !s.live.is_empty());
    }
    node.pending[p] = node.pending[p]
        .checked_sub(consumed)
        .ok_or_else(|| Error::contract("flush consumed more than pending"))?;
    node.page = None;
    Ok(merged)
}

/// Live buffered bytes of `node` with keys in `[lo, hi)`.
pub(crate) fn range_pending(pages: &dyn Pages, node: &Node, lo: Option<&Key>, hi: Option<&Key>) -> Result<u64> {
    let mut total = 0;
    for seg in node.levels.iter().flatten() {
        if !seg.overlaps(lo, hi) {
            continue;
        }
        let run = load(pages, &seg.run)?;
        let (a, b) = run.key_range(lo, hi);
        total += live_bytes(&run, &seg.live.clip(a as u32, b as u32));
    }
    Ok(total)
}

/// Restricts `seg` to the live entries with keys in `[lo, hi)`, tightening its key bounds.
fn restrict(run: &Run, seg: &Segment, lo: Option<&Key>, hi: Option<&Key>) -> Option<Segment> {
    let (a, b) = run.key_range(lo, hi);
    let live = seg.live.clip(a as u32, b as u32);
    let first = live.ranges().first()?.start as usize;
    let last = live.ranges().last()?.end as usize - 1;
    Some(Segment {
        run: seg.run.clone(),
        count: seg.count,
        first_key: run.entries()[first].key.clone(),
        last_key: run.entries()[last].key.clone(),
        live,
    })
}

/// Splits a node's pivots as evenly as possible (the left half gets the extra pivot).
/// Segments straddling the separator are shared by both halves.
pub fn split_node(pages: &dyn Pages, node: &Node) -> Result<(Node, Node, Key)> {
    let n = node.pivot_count();
    if n < 2 {
        return Err(Error::contract("cannot split a node with fewer than two pivots"));
    }
    let m = n.div_ceil(2);
    let sep = node.keys[m - 1].clone();
    let mut left_levels = vec![Vec::new(); node.levels.len()];
    let mut right_levels = vec![Vec::new(); node.levels.len()];
    for (i, level) in node.levels.iter().enumerate() {
        for seg in level {
            if seg.last_key < sep {
                left_levels[i].push(seg.clone());
            } else if seg.first_key >= sep {
                right_levels[i].push(seg.clone());
            } else {
                let run = load(pages, &seg.run)?;
                left_levels[i].extend(restrict(&run, seg, None, Some(&sep)));
                right_levels[i].extend(restrict(&run, seg, Some(&sep), None));
            }
        }
    }
    let left = Node {
        keys: node.keys[..m - 1].to_vec(),
        children: node.children[..m].to_vec(),
        pending: node.pending[..m].to_vec(),
        levels: left_levels,
        height: node.height,
        page: None,
    };
    let right = Node {
        keys: node.keys[m..].to_vec(),
        children: node.children[m..].to_vec(),
        pending: node.pending[m..].to_vec(),
        levels: right_levels,
        height: node.height,
        page: None,
    };
    Ok((left, right, sep))
}

/// Concatenates two adjacent siblings separated by `sep`. Buffer levels are merged by index;
/// a segment shared by both (from an earlier split) is reunited. The result may exceed level
/// capacities and must be normalized by the caller.
pub fn join_nodes(left: &Node, right: &Node, sep: Key) -> Result<Node> {
    if left.height != right.height || left.levels.len() != right.levels.len() {
        return Err(Error::contract("joining nodes of different shape"));
    }
    if left.keys.last().is_some_and(|k| *k >= sep) || right.keys.first().is_some_and(|k| *k <= sep) {
        return Err(Error::contract("joined nodes have overlapping key ranges"));
    }
    let mut levels = Vec::with_capacity(left.levels.len());
    for (l, r) in left.levels.iter().zip(&right.levels) {
        if l.iter().any(|s| s.first_key >= sep) || r.iter().any(|s| s.last_key < sep) {
            return Err(Error::contract("buffered keys on the wrong side of the separator"));
        }
        let mut out = l.clone();
        let mut rest = r.as_slice();
        if let (Some(a), Some(b)) = (out.last_mut(), r.first()) {
            if a.run.same(&b.run) {
                a.live = a.live.union(&b.live);
                a.last_key = b.last_key.clone();
                rest = &r[1..];
            }
        }
        out.extend(rest.iter().cloned());
        levels.push(out);
    }
    let mut keys = left.keys.clone();
    keys.push(sep);
    keys.extend(right.keys.iter().cloned());
    Ok(Node {
        keys,
        children: left.children.iter().chain(&right.children).cloned().collect(),
        pending: left.pending.iter().chain(&right.pending).copied().collect(),
        levels,
        height: left.height,
        page: None,
    })
}
