use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ENTRY_OVERHEAD, MAX_KEY_BYTES};

/// Buffer level growth factor. Fixed: each buffer level holds twice the segments of the one above.
pub const LEVEL_FANOUT: usize = 2;

/// Pivot sets are stored as a 64-bit mask.
pub const MAX_PIVOTS: usize = 64;

/// Store configuration.
///
/// Page geometry, pivot capacity and filter parameters are fixed when a store is created and
/// persisted in its `CONFIG` file. `chi`, the cache budget, the worker count and the log polling
/// period are runtime knobs and may differ between opens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub node_page_bytes: usize,
    pub leaf_page_bytes: usize,
    /// I/O transfer size; also the granularity of sharded leaf reads.
    pub block_bytes: usize,
    pub pivot_capacity: usize,
    /// Checkpoint distance: batches applied in memory between externalizations.
    pub chi: usize,
    /// Page cache budget.
    pub memory_budget_bytes: usize,
    pub filter_bits_per_key: usize,
    pub filter_fp_rate: f64,
    pub worker_threads: usize,
    pub wal_block_bytes: usize,
    pub wal_poll_ms: u64,
    /// fsync log blocks, pool files and manifest records. Disable only for throwaway stores.
    pub sync: bool,
    /// Upper bound on pages per pool file.
    pub pool_max_pages: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            node_page_bytes: 4 << 10,
            leaf_page_bytes: 64 << 10,
            block_bytes: 4 << 10,
            pivot_capacity: 16,
            chi: 1,
            memory_budget_bytes: 64 << 20,
            filter_bits_per_key: 10,
            filter_fp_rate: 0.01,
            worker_threads: 1,
            wal_block_bytes: 64 << 10,
            wal_poll_ms: 1,
            sync: true,
            pool_max_pages: 1 << 18,
        }
    }
}

/// The subset of [`Config`] the in-memory tree needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeConfig {
    /// Maximum pivots per node (rho).
    pub pivot_capacity: usize,
    /// Byte budget of a leaf, a segment, and a flushed batch (L).
    pub leaf_bytes: usize,
}

impl TreeConfig {
    pub fn new(pivot_capacity: usize, leaf_bytes: usize) -> Result<Self> {
        if !(4..=MAX_PIVOTS).contains(&pivot_capacity) {
            return Err(Error::InvalidParameter(format!(
                "pivot capacity {pivot_capacity} outside 4..={MAX_PIVOTS}"
            )));
        }
        if leaf_bytes < 4 * ENTRY_OVERHEAD {
            return Err(Error::InvalidParameter(format!("leaf budget {leaf_bytes} too small")));
        }
        Ok(TreeConfig { pivot_capacity, leaf_bytes })
    }

    /// Number of buffer levels per node: ceil(log2(rho)).
    pub fn level_count(&self) -> usize {
        let mut levels = 0;
        while (1usize << levels) < self.pivot_capacity {
            levels += 1;
        }
        levels
    }

    /// Segment capacity of buffer level `i`.
    ///
    /// Level `i` nominally holds `2^i` segments; the last level is trimmed so that the whole
    /// buffer never exceeds `rho - 1` segments when rho is not a power of two.
    pub fn level_capacity(&self, level: usize) -> usize {
        let below: usize = (0..level).map(|l| LEVEL_FANOUT.pow(l as u32)).sum();
        let budget = (self.pivot_capacity - 1).saturating_sub(below);
        LEVEL_FANOUT.pow(level as u32).min(budget).max(1)
    }

    pub fn min_pivots(&self) -> usize {
        self.pivot_capacity.div_ceil(2)
    }

    /// Buffered-bytes bound for a node with `pivots` children: L * (pivots - 1).
    pub fn buffer_limit(&self, pivots: usize) -> u64 {
        (self.leaf_bytes as u64) * (pivots.saturating_sub(1) as u64)
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.chi == 0 {
            return bad("chi must be at least 1".into());
        }
        if !(self.filter_fp_rate > 0.0 && self.filter_fp_rate < 1.0) {
            return bad(format!("filter fp rate {} outside (0, 1)", self.filter_fp_rate));
        }
        for (name, v) in [
            ("node_page_bytes", self.node_page_bytes),
            ("leaf_page_bytes", self.leaf_page_bytes),
            ("block_bytes", self.block_bytes),
            ("wal_block_bytes", self.wal_block_bytes),
        ] {
            if !v.is_power_of_two() || v < 512 {
                return bad(format!("{name} = {v} must be a power of two >= 512"));
            }
        }
        if self.leaf_page_bytes < 16 << 10 {
            return bad("leaf_page_bytes must be at least 16 KiB".into());
        }
        if self.leaf_page_bytes < self.node_page_bytes {
            return bad("leaf pages must not be smaller than node pages".into());
        }
        if self.wal_block_bytes < 4 << 10 {
            return bad("wal_block_bytes must be at least 4 KiB".into());
        }
        if self.pool_max_pages == 0 || self.pool_max_pages > (1 << 24) {
            return bad("pool_max_pages outside 1..=2^24".into());
        }
        self.tree_config()?;
        Ok(())
    }

    /// Bytes of a leaf page reserved for the header and sparse key index.
    pub fn leaf_index_region(&self) -> usize {
        self.leaf_page_bytes / 16
    }

    /// Entry-byte budget of a leaf or segment page (L).
    pub fn leaf_payload_bytes(&self) -> usize {
        self.leaf_page_bytes - self.leaf_index_region()
    }

    pub fn tree_config(&self) -> Result<TreeConfig> {
        TreeConfig::new(self.pivot_capacity, self.leaf_payload_bytes())
    }

    pub fn shard_bytes(&self) -> usize {
        self.block_bytes.min(self.leaf_page_bytes)
    }

    /// Filter pages share the node page size.
    pub fn filter_page_bytes(&self) -> usize {
        self.node_page_bytes
    }

    /// Bits per key for leaf filters: the larger of the configured bit rate and what the
    /// target false-positive rate needs (1.44 * log2(1/fp)).
    pub fn effective_filter_bits(&self) -> usize {
        let needed = (1.0 / self.filter_fp_rate).log2() * std::f64::consts::LN_2.recip();
        self.filter_bits_per_key.max(needed.ceil() as usize)
    }

    /// Largest accepted value. Keeps any single entry well under a quarter of a leaf and
    /// inside one log block.
    pub fn max_value_bytes(&self) -> usize {
        let leaf_cap = self.leaf_payload_bytes() / 4;
        let wal_cap = self.wal_block_bytes - crate::wal::BLOCK_HEADER_BYTES - 4;
        leaf_cap.min(wal_cap) - ENTRY_OVERHEAD - MAX_KEY_BYTES
    }

    /// True when the persistent layout of `other` matches this configuration.
    pub(crate) fn same_layout(&self, other: &Config) -> bool {
        self.node_page_bytes == other.node_page_bytes
            && self.leaf_page_bytes == other.leaf_page_bytes
            && self.block_bytes == other.block_bytes
            && self.pivot_capacity == other.pivot_capacity
            && self.filter_bits_per_key == other.filter_bits_per_key
            && self.filter_fp_rate == other.filter_fp_rate
            && self.wal_block_bytes == other.wal_block_bytes
            && self.pool_max_pages == other.pool_max_pages
    }
}
