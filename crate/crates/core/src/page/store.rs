use std::path::Path;
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;

use super::{CacheClass, ClockCache, PageId, PagePool, ShardKey};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fault::FaultInjector;
use crate::stats::{StatsCounters, MAX_POOLS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Node,
    Leaf,
    Filter,
}

/// Page pools (one file per page size) behind a shared shard cache.
#[derive(Debug)]
pub struct PageStore {
    pools: Vec<PagePool>,
    node_pool: usize,
    leaf_pool: usize,
    filter_pool: usize,
    shard_bytes: usize,
    fsync: bool,
    cache: Mutex<ClockCache>,
    stats: Arc<StatsCounters>,
    faults: Option<Arc<FaultInjector>>,
}

pub fn pool_file_name(page_bytes: usize) -> String {
    format!("pool-{page_bytes}.dat")
}

impl PageStore {
    pub fn open(
        dir: &Path,
        cfg: &Config,
        create: bool,
        stats: Arc<StatsCounters>,
        faults: Option<Arc<FaultInjector>>,
    ) -> Result<Self> {
        let mut sizes = vec![cfg.node_page_bytes, cfg.leaf_page_bytes, cfg.filter_page_bytes()];
        sizes.sort_unstable();
        sizes.dedup();
        debug_assert!(sizes.len() <= MAX_POOLS);
        let mut pools = Vec::with_capacity(sizes.len());
        for (i, &size) in sizes.iter().enumerate() {
            let path = dir.join(pool_file_name(size));
            let pool = if create {
                PagePool::create(&path, i as u8, size, cfg.pool_max_pages)?
            } else {
                PagePool::open(&path, i as u8, size)?
            };
            pools.push(pool);
        }
        let idx = |size| sizes.iter().position(|&s| s == size).unwrap();
        Ok(PageStore {
            node_pool: idx(cfg.node_page_bytes),
            leaf_pool: idx(cfg.leaf_page_bytes),
            filter_pool: idx(cfg.filter_page_bytes()),
            pools,
            shard_bytes: cfg.shard_bytes(),
            fsync: cfg.sync,
            cache: Mutex::new(ClockCache::new(cfg.memory_budget_bytes)),
            stats,
            faults,
        })
    }

    pub fn pool_index(&self, kind: PoolKind) -> usize {
        match kind {
            PoolKind::Node => self.node_pool,
            PoolKind::Leaf => self.leaf_pool,
            PoolKind::Filter => self.filter_pool,
        }
    }

    /// Smallest pool whose pages hold `len` bytes.
    pub fn pool_for_len(&self, len: usize) -> Option<usize> {
        self.pools.iter().position(|p| p.page_bytes() >= len)
    }

    pub fn page_bytes(&self, pool: usize) -> usize {
        self.pools[pool].page_bytes()
    }

    pub fn pool_count(&self) -> usize {
        self.pools.len()
    }

    pub fn shard_bytes(&self) -> usize {
        self.shard_bytes
    }

    pub fn stats(&self) -> &Arc<StatsCounters> {
        &self.stats
    }

    pub fn faults(&self) -> Option<&FaultInjector> {
        self.faults.as_deref()
    }

    fn pool(&self, id: PageId) -> Result<&PagePool> {
        self.pools.get(id.pool()).ok_or_else(|| Error::corrupt(format!("page {id} names unknown pool")))
    }

    pub fn write_page(&self, pool: usize, bytes: &[u8]) -> Result<PageId> {
        let id = self.pools[pool].write_page(bytes, self.faults())?;
        self.stats.record_page_write(pool, bytes.len());
        Ok(id)
    }

    /// Reads one shard, through the cache.
    pub fn read_shard(&self, key: ShardKey, class: CacheClass) -> Result<Bytes> {
        let pool = self.pool(key.page)?;
        StatsCounters::add(&self.stats.shard_reads, 1);
        if key.page.pool() == self.leaf_pool {
            StatsCounters::add(&self.stats.leaf_bytes_read, key.len as u64);
        }
        if let Some(b) = self.cache.lock().get(&key) {
            StatsCounters::add(&self.stats.cache_hits, 1);
            return Ok(b);
        }
        StatsCounters::add(&self.stats.cache_misses, 1);
        StatsCounters::add(&self.stats.pages_read, 1);
        let bytes = Bytes::from(pool.read(key.page, key.offset as usize, key.len as usize)?);
        let mut cache = self.cache.lock();
        // The page may have been freed while we were reading; only cache live data.
        if pool.is_live(key.page) {
            cache.insert(key, bytes.clone(), class);
        }
        Ok(bytes)
    }

    pub fn read_page(&self, id: PageId, class: CacheClass) -> Result<Bytes> {
        let len = self.pool(id)?.page_bytes() as u32;
        self.read_shard(ShardKey { page: id, offset: 0, len }, class)
    }

    /// Reads the byte range `[start, end)` of a page using shard-aligned boundaries and
    /// returns exactly that range.
    pub fn read_range(&self, id: PageId, start: usize, end: usize, class: CacheClass) -> Result<Bytes> {
        self.read_range_counted(id, start, end, class).map(|(b, _)| b)
    }

    /// Like [`read_range`](Self::read_range), also returning the shard-aligned span touched.
    pub fn read_range_counted(&self, id: PageId, start: usize, end: usize, class: CacheClass) -> Result<(Bytes, u64)> {
        let page_bytes = self.pool(id)?.page_bytes();
        let shard = self.shard_bytes.min(page_bytes);
        let lo = start / shard * shard;
        let hi = end.div_ceil(shard).saturating_mul(shard).min(page_bytes);
        let b = self.read_shard(ShardKey { page: id, offset: lo as u32, len: (hi - lo) as u32 }, class)?;
        Ok((b.slice(start - lo..end - lo), (hi - lo) as u64))
    }

    pub fn refcount(&self, id: PageId) -> u32 {
        self.pool(id).map(|p| p.refcount(id)).unwrap_or(0)
    }

    pub fn is_live(&self, id: PageId) -> bool {
        self.refcount(id) > 0
    }

    pub fn incref(&self, id: PageId) -> Result<u32> {
        self.adjust(id, 1)
    }

    pub fn decref(&self, id: PageId) -> Result<u32> {
        self.adjust(id, -1)
    }

    /// Applies a refcount delta; a page reaching zero is freed and its cached shards dropped.
    pub fn adjust(&self, id: PageId, delta: i64) -> Result<u32> {
        let n = self.pool(id)?.adjust(id, delta)?;
        if n == 0 {
            self.cache.lock().invalidate_page(id);
        }
        Ok(n)
    }

    pub fn restore(&self, live: &std::collections::HashMap<PageId, u32>) -> Result<()> {
        for (i, pool) in self.pools.iter().enumerate() {
            pool.restore(live.iter().filter(|(id, _)| id.pool() == i).map(|(&id, &rc)| (id, rc)))?;
        }
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        for p in &self.pools {
            p.sync(self.fsync)?;
        }
        Ok(())
    }

    /// Bytes held by live pages across all pools.
    pub fn live_bytes(&self) -> u64 {
        self.pools.iter().map(|p| p.live_pages() as u64 * p.page_bytes() as u64).sum()
    }

    pub fn live_pages(&self) -> usize {
        self.pools.iter().map(|p| p.live_pages()).sum()
    }

    pub fn cache_used_bytes(&self) -> usize {
        self.cache.lock().used_bytes()
    }

    pub fn set_cache_budget(&self, bytes: usize) {
        self.cache.lock().set_budget(bytes);
    }

    pub fn with_cache<R>(&self, f: impl FnOnce(&mut ClockCache) -> R) -> R {
        f(&mut self.cache.lock())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(dir: &Path, budget: usize) -> PageStore {
        let cfg = Config { memory_budget_bytes: budget, pool_max_pages: 64, ..Config::default() };
        PageStore::open(dir, &cfg, true, Arc::default(), None).unwrap()
    }

    #[test]
    fn shard_reads_are_cached_and_identical() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), 1 << 20);
        let leaf = s.pool_index(PoolKind::Leaf);
        let data: Vec<u8> = (0..65536u32).map(|i| (i * 7) as u8).collect();
        let id = s.write_page(leaf, &data).unwrap();
        let a = s.read_range(id, 5000, 5100, CacheClass::LeafShard).unwrap();
        let b = s.read_range(id, 5000, 5100, CacheClass::LeafShard).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..], &data[5000..5100]);
        let snap = s.stats().snapshot();
        assert_eq!(snap.cache_hits, 1);
        assert_eq!(snap.pages_read, 1);
        // Aligned 4 KiB shard.
        assert_eq!(snap.leaf_bytes_read, 2 * 4096);
        assert_eq!(&s.read_page(id, CacheClass::LeafShard).unwrap()[..], &data[..]);
    }

    #[test]
    fn free_invalidates_cache_and_rejects_reads() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), 1 << 20);
        let node = s.pool_index(PoolKind::Node);
        let id = s.write_page(node, &[3u8; 4096]).unwrap();
        s.read_page(id, CacheClass::Node).unwrap();
        assert!(s.cache_used_bytes() > 0);
        assert_eq!(s.decref(id).unwrap(), 0);
        assert_eq!(s.cache_used_bytes(), 0);
        assert!(matches!(s.read_page(id, CacheClass::Node), Err(Error::UseAfterFree(_))));
    }

    #[test]
    fn two_checkpoints_share_a_leaf() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), 1 << 20);
        let leaf = s.pool_index(PoolKind::Leaf);
        let id = s.write_page(leaf, &vec![1u8; 65536]).unwrap();
        // Second checkpoint references the same leaf.
        s.incref(id).unwrap();
        assert_eq!(s.decref(id).unwrap(), 1);
        assert!(s.is_live(id));
        assert_eq!(s.decref(id).unwrap(), 0);
        assert!(!s.is_live(id));
    }

    #[test]
    fn cache_respects_budget() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), 3 * 4096);
        let node = s.pool_index(PoolKind::Node);
        for i in 0..10u8 {
            let id = s.write_page(node, &[i; 4096]).unwrap();
            s.read_page(id, CacheClass::Node).unwrap();
            assert!(s.cache_used_bytes() <= 3 * 4096);
        }
    }
}
