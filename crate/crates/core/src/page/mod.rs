//! Durable page pools, sharded reads and the page cache.

mod cache;
mod pool;
pub mod run_page;
mod store;

use std::fmt;

pub use cache::{CacheClass, ClockCache};
pub use pool::PagePool;
pub use store::{PageStore, PoolKind};

/// Identity of one durable page: pool index, slot within the pool file, and the allocation
/// generation of that slot. A slot reused after being freed gets a new generation, so stale
/// identities never alias new contents.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageId(u64);

impl PageId {
    pub fn new(pool: u8, slot: u32, generation: u32) -> Self {
        debug_assert!(slot < (1 << 24));
        PageId(((pool as u64) << 56) | ((slot as u64) << 32) | generation as u64)
    }

    pub fn from_raw(raw: u64) -> Self {
        PageId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn pool(self) -> usize {
        (self.0 >> 56) as usize
    }

    pub fn slot(self) -> u32 {
        ((self.0 >> 32) & 0xff_ffff) as u32
    }

    pub fn generation(self) -> u32 {
        self.0 as u32
    }
}

impl fmt::Debug for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}:{}@{}", self.pool(), self.slot(), self.generation())
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// An aligned slice of a page, addressable and cacheable on its own.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ShardKey {
    pub page: PageId,
    pub offset: u32,
    pub len: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_id_packs_fields() {
        let id = PageId::new(3, 0xabcdef, 0xdead_beef);
        assert_eq!(id.pool(), 3);
        assert_eq!(id.slot(), 0xabcdef);
        assert_eq!(id.generation(), 0xdead_beef);
        assert_eq!(PageId::from_raw(id.raw()), id);
    }
}
