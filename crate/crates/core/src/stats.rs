use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use serde::Serialize;

/// Write destinations tracked separately. Page pools are indexed by size class.
pub const MAX_POOLS: usize = 4;

/// Instrumentation shared by every component. All counters only grow.
#[derive(Debug, Default)]
pub struct StatsCounters {
    pub user_bytes_in: AtomicU64,
    pub keys_in: AtomicU64,
    pub pool_pages_written: [AtomicU64; MAX_POOLS],
    pub pool_bytes_written: [AtomicU64; MAX_POOLS],
    pub wal_bytes_written: AtomicU64,
    pub manifest_bytes_written: AtomicU64,
    pub pages_read: AtomicU64,
    pub shard_reads: AtomicU64,
    pub leaf_bytes_read: AtomicU64,
    /// Point lookups that reached a stored leaf, and the shard bytes they touched.
    pub leaf_lookups: AtomicU64,
    pub leaf_lookup_bytes: AtomicU64,
    pub filter_negative_hits: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
    pub checkpoints: AtomicU64,
    pub batches_applied: AtomicU64,
    peak_memory_bytes: AtomicU64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StatsSnapshot {
    pub user_bytes_in: u64,
    pub keys_in: u64,
    pub pool_pages_written: [u64; MAX_POOLS],
    pub pool_bytes_written: [u64; MAX_POOLS],
    pub wal_bytes_written: u64,
    pub manifest_bytes_written: u64,
    pub pages_read: u64,
    pub shard_reads: u64,
    pub leaf_bytes_read: u64,
    pub leaf_lookups: u64,
    pub leaf_lookup_bytes: u64,
    pub filter_negative_hits: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub checkpoints: u64,
    pub batches_applied: u64,
    pub peak_memory_bytes: u64,
}

impl StatsCounters {
    pub fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Relaxed);
    }

    pub(crate) fn record_page_write(&self, pool: usize, bytes: usize) {
        self.pool_pages_written[pool].fetch_add(1, Relaxed);
        self.pool_bytes_written[pool].fetch_add(bytes as u64, Relaxed);
    }

    pub(crate) fn observe_memory(&self, bytes: u64) {
        self.peak_memory_bytes.fetch_max(bytes, Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let arr = |a: &[AtomicU64; MAX_POOLS]| std::array::from_fn(|i| a[i].load(Relaxed));
        StatsSnapshot {
            user_bytes_in: self.user_bytes_in.load(Relaxed),
            keys_in: self.keys_in.load(Relaxed),
            pool_pages_written: arr(&self.pool_pages_written),
            pool_bytes_written: arr(&self.pool_bytes_written),
            wal_bytes_written: self.wal_bytes_written.load(Relaxed),
            manifest_bytes_written: self.manifest_bytes_written.load(Relaxed),
            pages_read: self.pages_read.load(Relaxed),
            shard_reads: self.shard_reads.load(Relaxed),
            leaf_bytes_read: self.leaf_bytes_read.load(Relaxed),
            leaf_lookups: self.leaf_lookups.load(Relaxed),
            leaf_lookup_bytes: self.leaf_lookup_bytes.load(Relaxed),
            filter_negative_hits: self.filter_negative_hits.load(Relaxed),
            cache_hits: self.cache_hits.load(Relaxed),
            cache_misses: self.cache_misses.load(Relaxed),
            checkpoints: self.checkpoints.load(Relaxed),
            batches_applied: self.batches_applied.load(Relaxed),
            peak_memory_bytes: self.peak_memory_bytes.load(Relaxed),
        }
    }
}

impl StatsSnapshot {
    pub fn pages_written(&self) -> u64 {
        self.pool_pages_written.iter().sum()
    }

    pub fn bytes_written(&self) -> u64 {
        self.pool_bytes_written.iter().sum::<u64>()
            + self.wal_bytes_written
            + self.manifest_bytes_written
    }

    /// Total bytes written over user bytes ingested; `None` before any user data arrives.
    pub fn write_amplification(&self) -> Option<f64> {
        (self.user_bytes_in > 0).then(|| self.bytes_written() as f64 / self.user_bytes_in as f64)
    }

    /// Counter deltas `self - earlier`.
    pub fn since(&self, earlier: &StatsSnapshot) -> StatsSnapshot {
        let d = |a: u64, b: u64| a.saturating_sub(b);
        StatsSnapshot {
            user_bytes_in: d(self.user_bytes_in, earlier.user_bytes_in),
            keys_in: d(self.keys_in, earlier.keys_in),
            pool_pages_written: std::array::from_fn(|i| {
                d(self.pool_pages_written[i], earlier.pool_pages_written[i])
            }),
            pool_bytes_written: std::array::from_fn(|i| {
                d(self.pool_bytes_written[i], earlier.pool_bytes_written[i])
            }),
            wal_bytes_written: d(self.wal_bytes_written, earlier.wal_bytes_written),
            manifest_bytes_written: d(self.manifest_bytes_written, earlier.manifest_bytes_written),
            pages_read: d(self.pages_read, earlier.pages_read),
            shard_reads: d(self.shard_reads, earlier.shard_reads),
            leaf_bytes_read: d(self.leaf_bytes_read, earlier.leaf_bytes_read),
            leaf_lookups: d(self.leaf_lookups, earlier.leaf_lookups),
            leaf_lookup_bytes: d(self.leaf_lookup_bytes, earlier.leaf_lookup_bytes),
            filter_negative_hits: d(self.filter_negative_hits, earlier.filter_negative_hits),
            cache_hits: d(self.cache_hits, earlier.cache_hits),
            cache_misses: d(self.cache_misses, earlier.cache_misses),
            checkpoints: d(self.checkpoints, earlier.checkpoints),
            batches_applied: d(self.batches_applied, earlier.batches_applied),
            peak_memory_bytes: self.peak_memory_bytes,
        }
    }
}
