use super::{load, LeafRef, Pages};
use crate::config::TreeConfig;
use crate::error::Result;
use crate::model::{balanced_ranges, merge_runs, run_bytes, Update};

/// Cuts a sorted, tombstone-free run into the fewest byte-balanced leaves of at most L bytes.
pub(crate) fn split_leaves(cfg: &TreeConfig, entries: Vec<Update>) -> Vec<Vec<Update>> {
    if entries.is_empty() {
        return Vec::new();
    }
    let limit = cfg.leaf_bytes as u64;
    let mut parts = run_bytes(&entries).div_ceil(limit) as usize;
    loop {
        let ranges = balanced_ranges(&entries, parts);
        if ranges.len() == entries.len() || ranges.iter().all(|r| run_bytes(&entries[r.clone()]) <= limit) {
            return ranges.into_iter().map(|r| entries[r].to_vec()).collect();
        }
        parts += 1;
    }
}

/// Merges a batch into a leaf. Tombstones annihilate matching keys and are dropped. The result
/// is empty, one leaf, or several leaves when it overflows L.
pub fn leaf_merge(cfg: &TreeConfig, pages: &dyn Pages, leaf: &LeafRef, batch: &[Update]) -> Result<Vec<LeafRef>> {
    let run = load(pages, &leaf.run)?;
    let merged = merge_runs(&[batch, run.entries()], true)?;
    Ok(split_leaves(cfg, merged).into_iter().map(LeafRef::mem).collect())
}
