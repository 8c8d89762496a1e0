//! Batch application: buffer insertion, recursive flushes and structural repair.

use std::ops::Range;
use std::sync::Arc;

use super::leaf::split_leaves;
use super::node::{buffer_insert, max_pending, push_down, range_pending};
use super::{extract_flush_batch, join_nodes, leaf_merge, load, select_flush_pivot, split_node};
use super::{Child, InsertOutcome, LeafRef, Node, Pages, TreeRoot};
use crate::config::TreeConfig;
use crate::error::{Error, Result};
use crate::model::{check_sorted, merge_runs, Key, Update};

struct Ctx<'a> {
    cfg: &'a TreeConfig,
    pages: &'a dyn Pages,
}

fn chunks(batch: &[Update], limit: usize) -> Vec<&[Update]> {
    let mut out = Vec::new();
    let (mut start, mut acc) = (0, 0);
    for (i, u) in batch.iter().enumerate() {
        let n = u.encoded_len();
        if i > start && acc + n > limit {
            out.push(&batch[start..i]);
            start = i;
            acc = 0;
        }
        acc += n;
    }
    if start < batch.len() {
        out.push(&batch[start..]);
    }
    out
}

/// Applies a sorted, duplicate-free batch to a tree and returns the new version. The input
/// tree is never modified; nodes on the touched paths are copied.
pub fn batch_update(cfg: &TreeConfig, pages: &dyn Pages, tree: &TreeRoot, batch: &[Update]) -> Result<TreeRoot> {
    check_sorted(batch)?;
    let ctx = Ctx { cfg, pages };
    let mut t = tree.clone();
    for chunk in chunks(batch, cfg.leaf_bytes) {
        t = apply_chunk(&ctx, t, chunk)?;
    }
    Ok(t)
}

fn apply_chunk(ctx: &Ctx, tree: TreeRoot, chunk: &[Update]) -> Result<TreeRoot> {
    let leaves = match tree {
        TreeRoot::Empty => {
            let live = merge_runs(&[chunk], true)?;
            split_leaves(ctx.cfg, live).into_iter().map(LeafRef::mem).collect()
        }
        TreeRoot::Leaf(leaf) => leaf_merge(ctx.cfg, ctx.pages, &leaf, chunk)?,
        TreeRoot::Node(mut root) => {
            apply_to_node(ctx, Arc::make_mut(&mut root), chunk.to_vec())?;
            return finish_root(ctx, root);
        }
    };
    match leaves.len() {
        0 => Ok(TreeRoot::Empty),
        1 => Ok(TreeRoot::Leaf(leaves.into_iter().next().unwrap())),
        _ => {
            let keys = leaves[1..].iter().map(|l| first_key(ctx, l)).collect::<Result<_>>()?;
            let children = leaves.into_iter().map(Child::Leaf).collect();
            finish_root(ctx, Arc::new(Node::new(ctx.cfg, keys, children, 1)))
        }
    }
}

fn first_key(ctx: &Ctx, leaf: &LeafRef) -> Result<Key> {
    let run = load(ctx.pages, &leaf.run)?;
    run.entries().first().map(|u| u.key.clone()).ok_or_else(|| Error::contract("separator from empty leaf"))
}

/// Grows the root while it is over capacity and collapses it while it has a single pivot.
fn finish_root(ctx: &Ctx, mut root: Arc<Node>) -> Result<TreeRoot> {
    loop {
        if root.pivot_count() > ctx.cfg.pivot_capacity {
            let height = root.height + 1;
            let node = Arc::try_unwrap(root).unwrap_or_else(|a| (*a).clone());
            let (parts, seps) = split_to_fit(ctx, node)?;
            let children = parts.into_iter().map(|n| Child::Node(Arc::new(n))).collect();
            root = Arc::new(Node::new(ctx.cfg, seps, children, height));
            continue;
        }
        if root.pivot_count() == 1 {
            if root.segment_count() > 0 {
                flush_pivot(ctx, Arc::make_mut(&mut root), 0)?;
                continue;
            }
            match &root.children[0] {
                Child::Leaf(l) if l.bytes == 0 => return Ok(TreeRoot::Empty),
                Child::Leaf(l) => return Ok(TreeRoot::Leaf(l.clone())),
                Child::Node(c) => {
                    root = c.clone();
                    continue;
                }
            }
        }
        return Ok(TreeRoot::Node(root));
    }
}

fn apply_to_node(ctx: &Ctx, node: &mut Node, batch: Vec<Update>) -> Result<()> {
    while buffer_insert(ctx.cfg, ctx.pages, node, batch.clone())? == InsertOutcome::Full {
        force_flush(ctx, node)?;
    }
    restore(ctx, node)
}

fn force_flush(ctx: &Ctx, node: &mut Node) -> Result<()> {
    let p = max_pending(node).ok_or_else(|| Error::contract("buffer full with nothing pending"))?;
    flush_pivot(ctx, node, p)
}

/// Flushes until every buffer invariant of `node` holds and its children are in shape.
fn restore(ctx: &Ctx, node: &mut Node) -> Result<()> {
    loop {
        fix_children(ctx, node)?;
        if let Some(level) = (0..node.levels.len()).find(|&i| node.levels[i].len() > ctx.cfg.level_capacity(i)) {
            if push_down(ctx.cfg, ctx.pages, node, level)? == InsertOutcome::Full {
                force_flush(ctx, node)?;
            }
            continue;
        }
        if let Some(p) = select_flush_pivot(node, ctx.cfg.leaf_bytes) {
            flush_pivot(ctx, node, p)?;
            continue;
        }
        if node.buffered_bytes() > ctx.cfg.buffer_limit(node.pivot_count()) {
            force_flush(ctx, node)?;
            continue;
        }
        return Ok(());
    }
}

/// Extracts one leaf-sized batch for pivot `p` and applies it to that child.
fn flush_pivot(ctx: &Ctx, node: &mut Node, p: usize) -> Result<()> {
    let batch = extract_flush_batch(ctx.pages, node, p, ctx.cfg.leaf_bytes)?;
    if batch.is_empty() {
        return Ok(());
    }
    match &node.children[p] {
        Child::Leaf(leaf) => {
            let leaves = leaf_merge(ctx.cfg, ctx.pages, leaf, &batch)?;
            let seps = leaves[leaves.len().min(1)..].iter().map(|l| first_key(ctx, l)).collect::<Result<_>>()?;
            splice(ctx, node, p..p + 1, leaves.into_iter().map(Child::Leaf).collect(), seps)
        }
        Child::Node(child) => {
            let mut child = (**child).clone();
            apply_to_node(ctx, &mut child, batch)?;
            let (parts, seps) = split_to_fit(ctx, child)?;
            splice(ctx, node, p..p + 1, parts.into_iter().map(|n| Child::Node(Arc::new(n))).collect(), seps)
        }
    }
}

/// Replaces children `range` with `new` (separated by `seps`), recomputing pending bytes.
fn splice(ctx: &Ctx, node: &mut Node, range: Range<usize>, mut new: Vec<Child>, mut seps: Vec<Key>) -> Result<()> {
    let (i, j) = (range.start, range.end);
    node.page = None;
    if new.is_empty() {
        if node.pivot_count() > j - i {
            let moved: u64 = node.pending[i..j].iter().sum();
            if i > 0 {
                node.pending[i - 1] += moved;
                node.keys.drain(i - 1..j - 1);
            } else {
                node.pending[j] += moved;
                node.keys.drain(0..j);
            }
            node.children.drain(i..j);
            node.pending.drain(i..j);
            return Ok(());
        }
        new = vec![Child::Leaf(LeafRef::mem(Vec::new()))];
        seps.clear();
    }
    debug_assert_eq!(new.len(), seps.len() + 1);
    let old: u64 = node.pending[i..j].iter().sum();
    let k = new.len();
    node.keys.splice(i..j - 1, seps);
    node.children.splice(i..j, new);
    let pending = if k == 1 {
        vec![old]
    } else {
        (i..i + k)
            .map(|q| {
                let (lo, hi) = node.bounds(q);
                range_pending(ctx.pages, node, lo, hi)
            })
            .collect::<Result<Vec<_>>>()?
    };
    debug_assert_eq!(pending.iter().sum::<u64>(), old);
    node.pending.splice(i..j, pending);
    Ok(())
}

/// Splits a node repeatedly until every part has at most rho pivots and satisfies its own
/// buffer invariants.
fn split_to_fit(ctx: &Ctx, node: Node) -> Result<(Vec<Node>, Vec<Key>)> {
    let mut parts = vec![node];
    let mut seps = Vec::new();
    let mut i = 0;
    while i < parts.len() {
        if parts[i].pivot_count() <= ctx.cfg.pivot_capacity {
            i += 1;
            continue;
        }
        let (mut l, mut r, sep) = split_node(ctx.pages, &parts[i])?;
        restore(ctx, &mut l)?;
        restore(ctx, &mut r)?;
        parts.splice(i..i + 1, [l, r]);
        seps.insert(i, sep);
    }
    Ok((parts, seps))
}

/// Removes empty leaves, merges leaves under a quarter of L with a neighbour, and joins
/// under-full child nodes with a sibling.
fn fix_children(ctx: &Ctx, node: &mut Node) -> Result<()> {
    let mut i = 0;
    while i < node.children.len() {
        let n = node.children.len();
        if n < 2 {
            return Ok(());
        }
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        match &node.children[i] {
            Child::Leaf(l) if l.bytes == 0 => {
                splice(ctx, node, i..i + 1, Vec::new(), Vec::new())?;
                i = i.saturating_sub(1);
            }
            Child::Leaf(l) if l.bytes < ctx.cfg.leaf_bytes as u64 / 4 => {
                let (Child::Leaf(x), Child::Leaf(y)) = (&node.children[a], &node.children[b]) else {
                    return Err(Error::contract("leaf beside an interior node"));
                };
                let mut entries = load(ctx.pages, &x.run)?.entries().to_vec();
                entries.extend_from_slice(load(ctx.pages, &y.run)?.entries());
                let leaves: Vec<LeafRef> = split_leaves(ctx.cfg, entries).into_iter().map(LeafRef::mem).collect();
                let seps = leaves[1..].iter().map(|l| first_key(ctx, l)).collect::<Result<_>>()?;
                let grew = leaves.len() > 1;
                splice(ctx, node, a..b + 1, leaves.into_iter().map(Child::Leaf).collect(), seps)?;
                // A re-split pair is balanced above the threshold; move past it.
                i = if grew { a + 2 } else { a };
            }
            Child::Node(c) if c.pivot_count() < ctx.cfg.min_pivots() => {
                let (Child::Node(x), Child::Node(y)) = (&node.children[a], &node.children[b]) else {
                    return Err(Error::contract("interior node beside a leaf"));
                };
                let mut joined = join_nodes(x, y, node.keys[a].clone())?;
                restore(ctx, &mut joined)?;
                let (parts, seps) = split_to_fit(ctx, joined)?;
                let settled = parts.len() > 1 || parts[0].pivot_count() >= ctx.cfg.min_pivots();
                splice(ctx, node, a..b + 1, parts.into_iter().map(|n| Child::Node(Arc::new(n))).collect(), seps)?;
                i = if settled { a + 1 } else { a };
            }
            _ => i += 1,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_batch;
    use crate::tree::{check_tree, point_query, range_scan, Lookup, NoPages};
    use bytes::Bytes;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn key(n: u32) -> Key {
        Key::from(format!("key{n:06}").into_bytes())
    }

    fn leaf_count(t: &TreeRoot) -> usize {
        fn walk(n: &Node) -> usize {
            n.children
                .iter()
                .map(|c| match c {
                    Child::Leaf(_) => 1,
                    Child::Node(n) => walk(n),
                })
                .sum()
        }
        match t {
            TreeRoot::Empty => 0,
            TreeRoot::Leaf(_) => 1,
            TreeRoot::Node(n) => walk(n),
        }
    }

    #[test]
    fn empty_tree_cases() {
        let cfg = TreeConfig::new(8, 2048).unwrap();
        let t = TreeRoot::Empty;
        assert_eq!(point_query(&NoPages, &t, b"x").unwrap(), Lookup::Absent);
        let batch = vec![Update::put("a", "1", 1), Update::delete("b", 2)];
        let t = batch_update(&cfg, &NoPages, &t, &batch).unwrap();
        assert!(matches!(t, TreeRoot::Leaf(_)));
        assert_eq!(point_query(&NoPages, &t, b"a").unwrap(), Lookup::Found(Bytes::from("1")));
        assert_eq!(point_query(&NoPages, &t, b"b").unwrap(), Lookup::Absent);
        assert!(range_scan(&NoPages, &t, &Key::from("a"), 0).unwrap().is_empty());
        let t = batch_update(&cfg, &NoPages, &t, &[Update::delete("a", 3)]).unwrap();
        assert!(matches!(t, TreeRoot::Empty));
    }

    #[test]
    fn overflowing_leaf_gets_a_parent() {
        let cfg = TreeConfig::new(8, 2048).unwrap();
        let first: Vec<Update> = (0..40).map(|i| Update::put(key(i * 2), vec![7u8; 20], 1)).collect();
        let t = batch_update(&cfg, &NoPages, &TreeRoot::Empty, &first).unwrap();
        assert!(matches!(t, TreeRoot::Leaf(_)));
        let second: Vec<Update> = (0..40).map(|i| Update::put(key(i * 2 + 1), vec![7u8; 20], 2)).collect();
        let t = batch_update(&cfg, &NoPages, &t, &second).unwrap();
        let TreeRoot::Node(root) = &t else { panic!("expected a node root") };
        assert_eq!(root.pivot_count(), 2);
        assert_eq!(root.segment_count(), 0);
        check_tree(&cfg, &NoPages, &t).unwrap();
    }

    #[test]
    fn worked_example_queries() {
        let cfg = TreeConfig::new(8, 4096).unwrap();
        let k = |n: u32| Key::from(format!("{n:02}").into_bytes());
        let filler = |c: char| -> Vec<Update> {
            (0..40).map(|i| Update::put(Key::from(format!("{c}{i:03}").into_bytes()), vec![0u8; 10], 0)).collect()
        };
        let leaves = vec![filler('!'), filler('x')];
        let mut t = TreeRoot::from_leaves(&cfg, leaves).unwrap();
        for (keys, seq) in [(&[1, 7, 10], 1), (&[0, 4, 5], 2), (&[2, 8, 11], 3), (&[3, 6, 9], 4)] {
            let b: Vec<Update> = keys.iter().map(|&n| Update::put(k(n), format!("v{n:02}").into_bytes(), seq)).collect();
            t = batch_update(&cfg, &NoPages, &t, &b).unwrap();
        }
        let TreeRoot::Node(root) = &t else { panic!() };
        assert_eq!(root.levels[2].len(), 4);
        assert_eq!(point_query(&NoPages, &t, b"06").unwrap(), Lookup::Found(Bytes::from("v06")));
        assert_eq!(point_query(&NoPages, &t, b"00").unwrap(), Lookup::Found(Bytes::from("v00")));
        let got: Vec<Key> = range_scan(&NoPages, &t, &k(0), 12).unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(got, (0..12).map(k).collect::<Vec<_>>());
    }

    fn oracle_run(seed: u64, batches: usize, per_batch: usize, keyspace: u32, cfg: TreeConfig) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut oracle: BTreeMap<Key, Bytes> = BTreeMap::new();
        let mut t = TreeRoot::Empty;
        let mut seq = 0;
        for _ in 0..batches {
            let mut ups = Vec::new();
            for _ in 0..per_batch {
                seq += 1;
                let k = key(rng.gen_range(0..keyspace));
                if rng.gen_bool(0.25) {
                    ups.push(Update::delete(k, seq));
                } else {
                    let v = Bytes::from(vec![(seq % 251) as u8; rng.gen_range(0..40)]);
                    ups.push(Update::put(k, v, seq));
                }
            }
            let batch = make_batch(ups).unwrap();
            for u in batch.entries() {
                match u.payload.value() {
                    Some(v) => oracle.insert(u.key.clone(), v.clone()),
                    None => oracle.remove(&u.key),
                };
            }
            t = batch_update(&cfg, &NoPages, &t, batch.entries()).unwrap();
            check_tree(&cfg, &NoPages, &t).unwrap();
        }
        let all = range_scan(&NoPages, &t, &key(0), usize::MAX).unwrap();
        assert_eq!(all, oracle.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>());
        for _ in 0..2000 {
            let k = key(rng.gen_range(0..keyspace));
            let got = point_query(&NoPages, &t, &k).unwrap();
            match oracle.get(&k) {
                Some(v) => assert_eq!(got, Lookup::Found(v.clone())),
                None => assert!(matches!(got, Lookup::Absent | Lookup::Deleted)),
            }
            let n = rng.gen_range(0..30);
            let want: Vec<_> = oracle.range(k.clone()..).take(n).map(|(k, v)| (k.clone(), v.clone())).collect();
            assert_eq!(range_scan(&NoPages, &t, &k, n).unwrap(), want);
        }
        assert!(leaf_count(&t) > 1 || oracle.len() < 50);
    }

    #[test]
    fn random_batches_match_oracle() {
        oracle_run(1, 100, 100, 3000, TreeConfig::new(8, 2048).unwrap());
    }

    #[test]
    fn deep_tree_with_heavy_deletes() {
        oracle_run(2, 300, 60, 1500, TreeConfig::new(4, 1024).unwrap());
        oracle_run(3, 200, 150, 20_000, TreeConfig::new(6, 1024).unwrap());
    }
}
