use super::{load, Child, LeafRef, Node, Pages, TreeRoot};
use crate::config::TreeConfig;
use crate::error::{Error, Result};
use crate::model::{check_sorted, run_bytes, Key};

struct Checker<'a> {
    cfg: &'a TreeConfig,
    pages: &'a dyn Pages,
    leaf_depth: Option<usize>,
}

fn fail<T>(msg: String) -> Result<T> {
    Err(Error::ContractViolation(msg))
}

fn in_bounds(k: &Key, lo: Option<&Key>, hi: Option<&Key>) -> bool {
    lo.is_none_or(|lo| k >= lo) && hi.is_none_or(|hi| k < hi)
}

/// Verifies every structural invariant of the tree, loading all leaves and segments.
pub fn check_tree(cfg: &TreeConfig, pages: &dyn Pages, tree: &TreeRoot) -> Result<()> {
    let mut c = Checker { cfg, pages, leaf_depth: None };
    match tree {
        TreeRoot::Empty => Ok(()),
        TreeRoot::Leaf(l) => c.leaf(l, None, None, 0),
        TreeRoot::Node(n) => {
            if n.pivot_count() < 2 {
                return fail(format!("interior root has {} pivots", n.pivot_count()));
            }
            c.node(n, None, None, 0, true)
        }
    }
}

impl Checker<'_> {
    fn leaf(&mut self, leaf: &LeafRef, lo: Option<&Key>, hi: Option<&Key>, depth: usize) -> Result<()> {
        match self.leaf_depth {
            None => self.leaf_depth = Some(depth),
            Some(d) if d != depth => return fail(format!("leaves at depths {d} and {depth}")),
            _ => {}
        }
        let run = load(self.pages, &leaf.run)?;
        let e = run.entries();
        check_sorted(e)?;
        if run_bytes(e) != leaf.bytes || leaf.bytes > self.cfg.leaf_bytes as u64 {
            return fail(format!("leaf holds {} bytes, recorded {}", run_bytes(e), leaf.bytes));
        }
        if e.iter().any(|u| u.payload.is_tombstone()) {
            return fail("tombstone in leaf".into());
        }
        if e.iter().any(|u| !in_bounds(&u.key, lo, hi)) {
            return fail("leaf key outside its pivot range".into());
        }
        Ok(())
    }

    fn node(&mut self, node: &Node, lo: Option<&Key>, hi: Option<&Key>, depth: usize, root: bool) -> Result<()> {
        let cfg = self.cfg;
        let n = node.pivot_count();
        if node.keys.len() + 1 != n || node.pending.len() != n {
            return fail("pivot arrays disagree in length".into());
        }
        if n > cfg.pivot_capacity || (!root && n < cfg.min_pivots()) {
            return fail(format!("node at depth {depth} has {n} pivots"));
        }
        if node.keys.windows(2).any(|w| w[0] >= w[1]) || node.keys.iter().any(|k| !in_bounds(k, lo, hi)) {
            return fail("separators not ascending within bounds".into());
        }
        if node.levels.len() != cfg.level_count() {
            return fail("wrong number of buffer levels".into());
        }
        if node.segment_count() > cfg.pivot_capacity - 1 {
            return fail(format!("{} segments exceed rho - 1", node.segment_count()));
        }
        if node.buffered_bytes() > cfg.buffer_limit(n) {
            return fail(format!("{} buffered bytes exceed L * (pivots - 1) = {}", node.buffered_bytes(), cfg.buffer_limit(n)));
        }
        let mut pending = vec![0u64; n];
        for (i, level) in node.levels.iter().enumerate() {
            if level.len() > cfg.level_capacity(i) {
                return fail(format!("level {i} holds {} segments", level.len()));
            }
            let mut prev: Option<Key> = None;
            for seg in level {
                if seg.live.is_empty() {
                    return fail("segment with nothing live".into());
                }
                let run = load(self.pages, &seg.run)?;
                check_sorted(run.entries())?;
                if run.len() != seg.count as usize {
                    return fail("segment count mismatch".into());
                }
                for r in seg.live.ranges() {
                    for u in &run.entries()[r.start as usize..r.end as usize] {
                        if prev.as_ref().is_some_and(|p| u.key <= *p) {
                            return fail(format!("keys not unique and ascending in level {i}"));
                        }
                        if !in_bounds(&u.key, lo, hi) || u.key < seg.first_key || u.key > seg.last_key {
                            return fail("buffered key outside bounds".into());
                        }
                        pending[node.pivot_for(&u.key)] += u.encoded_len() as u64;
                        prev = Some(u.key.clone());
                    }
                }
            }
        }
        if pending != node.pending {
            return fail(format!("pending bytes {:?} but buffer holds {:?}", node.pending, pending));
        }
        for (p, child) in node.children.iter().enumerate() {
            let (clo, chi) = node.bounds(p);
            let clo = clo.or(lo);
            let chi = chi.or(hi);
            match child {
                Child::Leaf(l) => {
                    if node.height != 1 {
                        return fail("leaf under a node of height > 1".into());
                    }
                    self.leaf(l, clo, chi, depth + 1)?
                }
                Child::Node(c) => {
                    if c.height + 1 != node.height {
                        return fail("inconsistent node heights".into());
                    }
                    self.node(c, clo, chi, depth + 1, false)?
                }
            }
        }
        Ok(())
    }
}
