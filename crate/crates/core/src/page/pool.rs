use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;

use super::PageId;
use crate::error::{Error, Result};
use crate::fault::{guarded_write, CrashPoint, FaultInjector};

const MAGIC: &[u8; 8] = b"TKVPOOL1";
const VERSION: u32 = 1;
const HEADER_BYTES: u64 = 4096;
const EXTENT_PAGES: usize = 64;

/// One file of fixed-size pages.
///
/// Layout: a 4 KiB header `{magic, version, page_bytes, capacity}`, an allocation bitmap of
/// `capacity` bits, then the page region aligned to `page_bytes`. Reference counts live in the
/// checkpoint manifest; the bitmap is a mirror refreshed on every sync.
#[derive(Debug)]
pub struct PagePool {
    index: u8,
    page_bytes: usize,
    capacity: usize,
    data_offset: u64,
    path: PathBuf,
    file: File,
    meta: RwLock<PoolMeta>,
}

#[derive(Debug, Default)]
struct PoolMeta {
    refcounts: Vec<u32>,
    generations: Vec<u32>,
    free: Vec<u32>,
    /// Slots backed by the file so far.
    file_pages: usize,
    next_generation: u32,
}

fn bitmap_bytes(capacity: usize) -> u64 {
    (capacity as u64).div_ceil(8).next_multiple_of(4096)
}

impl PagePool {
    pub fn create(path: &Path, index: u8, page_bytes: usize, capacity: usize) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create_new(true).open(path)?;
        let mut header = vec![0u8; HEADER_BYTES as usize];
        header[..8].copy_from_slice(MAGIC);
        header[8..12].copy_from_slice(&VERSION.to_le_bytes());
        header[12..16].copy_from_slice(&(page_bytes as u32).to_le_bytes());
        header[16..24].copy_from_slice(&(capacity as u64).to_le_bytes());
        file.write_all_at(&header, 0)?;
        let data_offset = (HEADER_BYTES + bitmap_bytes(capacity)).next_multiple_of(page_bytes as u64);
        file.set_len(data_offset)?;
        file.sync_all()?;
        Ok(Self::with_file(path, file, index, page_bytes, capacity, data_offset))
    }

    pub fn open(path: &Path, index: u8, page_bytes: usize) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut header = [0u8; 24];
        file.read_exact_at(&mut header, 0)?;
        if &header[..8] != MAGIC {
            return Err(Error::OpenFailure(format!("{} is not a page pool", path.display())));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::OpenFailure(format!("pool version {version} unsupported")));
        }
        let stored = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if stored != page_bytes {
            return Err(Error::OpenFailure(format!(
                "{}: page size {stored} does not match configured {page_bytes}",
                path.display()
            )));
        }
        let capacity = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let data_offset = (HEADER_BYTES + bitmap_bytes(capacity)).next_multiple_of(page_bytes as u64);
        let pool = Self::with_file(path, file, index, page_bytes, capacity, data_offset);
        let len = pool.file.metadata()?.len();
        pool.meta.write().file_pages = (len.saturating_sub(data_offset) / page_bytes as u64) as usize;
        Ok(pool)
    }

    fn with_file(path: &Path, file: File, index: u8, page_bytes: usize, capacity: usize, data_offset: u64) -> Self {
        PagePool {
            index,
            page_bytes,
            capacity,
            data_offset,
            path: path.to_owned(),
            file,
            meta: RwLock::new(PoolMeta { next_generation: 1, ..Default::default() }),
        }
    }

    pub fn page_bytes(&self) -> usize {
        self.page_bytes
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn offset(&self, slot: u32) -> u64 {
        self.data_offset + slot as u64 * self.page_bytes as u64
    }

    /// Allocates a slot, writes `bytes` into it and sets its refcount to 1.
    pub fn write_page(&self, bytes: &[u8], faults: Option<&FaultInjector>) -> Result<PageId> {
        if bytes.len() != self.page_bytes {
            return Err(Error::contract(format!(
                "page write of {} bytes into {}-byte pool",
                bytes.len(),
                self.page_bytes
            )));
        }
        let id = {
            let mut m = self.meta.write();
            let slot = match m.free.pop() {
                Some(s) => s,
                None => {
                    let s = m.refcounts.len();
                    if s >= self.capacity {
                        return Err(Error::OutOfSpace { page_bytes: self.page_bytes });
                    }
                    m.refcounts.push(0);
                    m.generations.push(0);
                    s as u32
                }
            };
            if slot as usize >= m.file_pages {
                let pages = (slot as usize + EXTENT_PAGES).min(self.capacity);
                self.file.set_len(self.offset(pages as u32))?;
                m.file_pages = pages;
            }
            let generation = m.next_generation;
            m.next_generation = m.next_generation.wrapping_add(1).max(1);
            m.generations[slot as usize] = generation;
            m.refcounts[slot as usize] = 1;
            PageId::new(self.index, slot, generation)
        };
        let off = self.offset(id.slot());
        let res = guarded_write(faults, CrashPoint::PageWrite, bytes, |d| self.file.write_all_at(d, off));
        if res.is_err() {
            self.release(id);
        }
        res.map(|_| id)
    }

    fn release(&self, id: PageId) {
        let mut m = self.meta.write();
        let s = id.slot() as usize;
        if m.generations.get(s) == Some(&id.generation()) && m.refcounts[s] > 0 {
            m.refcounts[s] = 0;
            m.free.push(id.slot());
        }
    }

    fn check_live(m: &PoolMeta, id: PageId) -> Result<()> {
        let s = id.slot() as usize;
        if m.generations.get(s) == Some(&id.generation()) && m.refcounts[s] > 0 {
            Ok(())
        } else {
            Err(Error::UseAfterFree(id))
        }
    }

    /// Reads `len` bytes at `offset` within a live page.
    pub fn read(&self, id: PageId, offset: usize, len: usize) -> Result<Vec<u8>> {
        if offset + len > self.page_bytes {
            return Err(Error::contract(format!("read {offset}+{len} past {}-byte page", self.page_bytes)));
        }
        let m = self.meta.read();
        Self::check_live(&m, id)?;
        let mut buf = vec![0u8; len];
        self.file.read_exact_at(&mut buf, self.offset(id.slot()) + offset as u64)?;
        Ok(buf)
    }

    pub fn refcount(&self, id: PageId) -> u32 {
        let m = self.meta.read();
        match Self::check_live(&m, id) {
            Ok(()) => m.refcounts[id.slot() as usize],
            Err(_) => 0,
        }
    }

    pub fn is_live(&self, id: PageId) -> bool {
        self.refcount(id) > 0
    }

    pub fn incref(&self, id: PageId) -> Result<u32> {
        self.adjust(id, 1)
    }

    /// Drops one reference; at zero the slot becomes reusable.
    pub fn decref(&self, id: PageId) -> Result<u32> {
        self.adjust(id, -1)
    }

    pub fn adjust(&self, id: PageId, delta: i64) -> Result<u32> {
        let mut m = self.meta.write();
        if Self::check_live(&m, id).is_err() {
            return Err(Error::contract(format!("refcount change on dead page {id}")));
        }
        let s = id.slot() as usize;
        let next = m.refcounts[s] as i64 + delta;
        if next < 0 {
            return Err(Error::contract(format!("refcount of {id} would go negative")));
        }
        m.refcounts[s] = next as u32;
        if next == 0 {
            m.free.push(id.slot());
        }
        Ok(next as u32)
    }

    /// Replaces allocation state with the live set recovered from the manifest.
    pub fn restore(&self, live: impl IntoIterator<Item = (PageId, u32)>) -> Result<()> {
        let mut m = self.meta.write();
        let slots = m.file_pages;
        m.refcounts = vec![0; slots];
        m.generations = vec![0; slots];
        let mut max_gen = 0;
        for (id, rc) in live {
            let s = id.slot() as usize;
            if s >= slots {
                return Err(Error::OpenFailure(format!("live page {id} beyond end of pool file")));
            }
            m.refcounts[s] = rc;
            m.generations[s] = id.generation();
            max_gen = max_gen.max(id.generation());
        }
        m.free = (0..slots as u32).rev().filter(|&s| m.refcounts[s as usize] == 0).collect();
        m.next_generation = max_gen.wrapping_add(1).max(1);
        Ok(())
    }

    pub fn live_pages(&self) -> usize {
        self.meta.read().refcounts.iter().filter(|&&c| c > 0).count()
    }

    /// Writes the allocation bitmap and syncs the file.
    pub fn sync(&self, fsync: bool) -> Result<()> {
        let bitmap = {
            let m = self.meta.read();
            let mut bits = vec![0u8; m.refcounts.len().div_ceil(8)];
            for (i, &rc) in m.refcounts.iter().enumerate() {
                if rc > 0 {
                    bits[i / 8] |= 1 << (i % 8);
                }
            }
            bits
        };
        self.file.write_all_at(&bitmap, HEADER_BYTES)?;
        if fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}
