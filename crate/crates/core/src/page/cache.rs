use std::collections::HashMap;

use bytes::Bytes;

use super::{PageId, ShardKey};

/// Retention classes. An entry's priority is reset to its class value on every access and
/// decremented each time the clock hand passes it; it is evicted once the hand finds it at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheClass {
    LeafShard = 1,
    Filter = 2,
    Node = 3,
}

#[derive(Debug)]
struct Slot {
    key: ShardKey,
    bytes: Bytes,
    class: CacheClass,
    priority: u8,
    pinned: u32,
}

/// Priority CLOCK cache keyed by page shard, bounded by a byte budget.
#[derive(Debug)]
pub struct ClockCache {
    budget: usize,
    used: usize,
    slots: Vec<Option<Slot>>,
    vacant: Vec<usize>,
    index: HashMap<ShardKey, usize>,
    by_page: HashMap<PageId, Vec<ShardKey>>,
    hand: usize,
}

impl ClockCache {
    pub fn new(budget: usize) -> Self {
        ClockCache {
            budget,
            used: 0,
            slots: Vec::new(),
            vacant: Vec::new(),
            index: HashMap::new(),
            by_page: HashMap::new(),
            hand: 0,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn used_bytes(&self) -> usize {
        self.used
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&mut self, key: &ShardKey) -> Option<Bytes> {
        let &i = self.index.get(key)?;
        let slot = self.slots[i].as_mut().expect("indexed slot is occupied");
        slot.priority = slot.class as u8;
        Some(slot.bytes.clone())
    }

    pub fn priority(&self, key: &ShardKey) -> Option<u8> {
        self.index.get(key).map(|&i| self.slots[i].as_ref().unwrap().priority)
    }

    /// Caches `bytes`, evicting as needed. Returns false when the entry cannot fit because
    /// everything else is pinned or it exceeds the whole budget.
    pub fn insert(&mut self, key: ShardKey, bytes: Bytes, class: CacheClass) -> bool {
        if let Some(&i) = self.index.get(&key) {
            let slot = self.slots[i].as_mut().unwrap();
            slot.priority = class as u8;
            return true;
        }
        let n = bytes.len();
        if n > self.budget {
            return false;
        }
        while self.used + n > self.budget {
            if self.evict_step().is_none() {
                return false;
            }
        }
        let slot = Slot { key, bytes, class, priority: class as u8, pinned: 0 };
        let i = match self.vacant.pop() {
            Some(i) => {
                self.slots[i] = Some(slot);
                i
            }
            None => {
                self.slots.push(Some(slot));
                self.slots.len() - 1
            }
        };
        self.index.insert(key, i);
        self.by_page.entry(key.page).or_default().push(key);
        self.used += n;
        true
    }

    pub fn pin(&mut self, key: &ShardKey) -> bool {
        match self.index.get(key) {
            Some(&i) => {
                self.slots[i].as_mut().unwrap().pinned += 1;
                true
            }
            None => false,
        }
    }

    pub fn unpin(&mut self, key: &ShardKey) {
        if let Some(&i) = self.index.get(key) {
            let s = self.slots[i].as_mut().unwrap();
            s.pinned = s.pinned.saturating_sub(1);
        }
    }

    /// Moves the clock hand over one slot. Returns the evicted key if that slot was
    /// unpinned with priority zero.
    pub fn tick(&mut self) -> Option<ShardKey> {
        if self.slots.is_empty() {
            return None;
        }
        let i = self.hand % self.slots.len();
        self.hand = (i + 1) % self.slots.len();
        let slot = self.slots[i].as_mut()?;
        if slot.pinned > 0 {
            return None;
        }
        if slot.priority > 0 {
            slot.priority -= 1;
            return None;
        }
        let key = slot.key;
        self.remove_slot(i);
        Some(key)
    }

    /// Advances the hand until one entry is evicted. Gives up after enough full cycles to
    /// drain every priority, which only happens when all entries are pinned.
    pub fn evict_step(&mut self) -> Option<ShardKey> {
        let limit = self.slots.len() * (CacheClass::Node as usize + 2);
        (0..limit).find_map(|_| self.tick())
    }

    fn remove_slot(&mut self, i: usize) {
        let slot = self.slots[i].take().unwrap();
        self.index.remove(&slot.key);
        if let Some(keys) = self.by_page.get_mut(&slot.key.page) {
            keys.retain(|k| k != &slot.key);
            if keys.is_empty() {
                self.by_page.remove(&slot.key.page);
            }
        }
        self.used -= slot.bytes.len();
        self.vacant.push(i);
    }

    /// Drops every cached shard of `page`.
    pub fn invalidate_page(&mut self, page: PageId) {
        for key in self.by_page.remove(&page).unwrap_or_default() {
            if let Some(i) = self.index.remove(&key) {
                let slot = self.slots[i].take().unwrap();
                self.used -= slot.bytes.len();
                self.vacant.push(i);
            }
        }
    }

    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget;
        while self.used > self.budget && self.evict_step().is_some() {}
    }

    /// Sum of cached bytes per class, for instrumentation.
    pub fn bytes_by_class(&self, class: CacheClass) -> usize {
        self.slots.iter().flatten().filter(|s| s.class == class).map(|s| s.bytes.len()).sum()
    }
}
