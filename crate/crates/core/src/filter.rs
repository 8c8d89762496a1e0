//! Per-leaf approximate membership filter (Bloom filter with double hashing).

use bytes::{Buf, BufMut};
use xxhash_rust::xxh3::xxh3_128;

use crate::error::{Error, Result};
use crate::model::Update;

const MAGIC: &[u8; 4] = b"TFLT";
const HEADER_BYTES: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Filter {
    bits: Vec<u64>,
    nbits: u64,
    hashes: u32,
    keys: u32,
}

fn probes(key: &[u8]) -> (u64, u64) {
    let h = xxh3_128(key);
    (h as u64, ((h >> 64) as u64) | 1)
}

impl Filter {
    /// A filter sized for `keys` keys at `bits_per_key`, never larger than `max_bytes` encoded.
    pub fn with_capacity(keys: usize, bits_per_key: usize, max_bytes: usize) -> Self {
        let max_bits = ((max_bytes - HEADER_BYTES) / 8 * 64) as u64;
        let nbits = ((keys * bits_per_key) as u64).clamp(64, max_bits).div_ceil(64) * 64;
        let per_key = nbits as f64 / keys.max(1) as f64;
        let hashes = (per_key * std::f64::consts::LN_2).round().clamp(1.0, 16.0) as u32;
        Filter { bits: vec![0; (nbits / 64) as usize], nbits, hashes, keys: 0 }
    }

    pub fn insert(&mut self, key: &[u8]) {
        let (h1, h2) = probes(key);
        for i in 0..self.hashes as u64 {
            let b = h1.wrapping_add(i.wrapping_mul(h2)) % self.nbits;
            self.bits[(b / 64) as usize] |= 1 << (b % 64);
        }
        self.keys += 1;
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        if self.keys == 0 {
            return false;
        }
        let (h1, h2) = probes(key);
        (0..self.hashes as u64).all(|i| {
            let b = h1.wrapping_add(i.wrapping_mul(h2)) % self.nbits;
            self.bits[(b / 64) as usize] & (1 << (b % 64)) != 0
        })
    }

    pub fn key_count(&self) -> usize {
        self.keys as usize
    }

    /// Encodes into exactly `page_bytes` bytes.
    pub fn encode(&self, page_bytes: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(page_bytes);
        out.put_slice(MAGIC);
        out.put_u32_le(self.hashes);
        out.put_u32_le(self.keys);
        out.put_u32_le((self.nbits / 64) as u32);
        for w in &self.bits {
            out.put_u64_le(*w);
        }
        debug_assert!(out.len() <= page_bytes);
        out.resize(page_bytes, 0);
        out
    }

    pub fn decode(mut b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_BYTES || &b[..4] != MAGIC {
            return Err(Error::corrupt("bad filter page"));
        }
        b.advance(4);
        let hashes = b.get_u32_le();
        let keys = b.get_u32_le();
        let words = b.get_u32_le() as usize;
        if words == 0 || b.remaining() < words * 8 || hashes == 0 {
            return Err(Error::corrupt("truncated filter page"));
        }
        let bits = (0..words).map(|_| b.get_u64_le()).collect();
        Ok(Filter { bits, nbits: words as u64 * 64, hashes, keys })
    }
}

/// Builds the filter for a leaf's final contents.
pub fn build_leaf_filter(entries: &[Update], bits_per_key: usize, max_bytes: usize) -> Filter {
    let mut f = Filter::with_capacity(entries.len(), bits_per_key, max_bytes);
    for u in entries {
        f.insert(&u.key);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Key;

    fn leaf(n: usize) -> Vec<Update> {
        (0..n).map(|i| Update::put(Key::from(format!("k{i:08}").into_bytes()), vec![1u8], i as u64)).collect()
    }

    #[test]
    fn stored_keys_are_always_found() {
        let l = leaf(2);
        let f = build_leaf_filter(&l, 10, 4096);
        assert!(f.contains(b"k00000000") && f.contains(b"k00000001"));
        let l = leaf(3000);
        let f = build_leaf_filter(&l, 10, 4096);
        assert!(l.iter().all(|u| f.contains(&u.key)));
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = build_leaf_filter(&[], 10, 4096);
        assert!((0..1000).all(|i| !f.contains(format!("x{i}").as_bytes())));
    }

    #[test]
    fn false_positive_rate_within_twice_target() {
        let l = leaf(400);
        let f = build_leaf_filter(&l, 10, 4096);
        let fp = (0..100_000).filter(|i| f.contains(format!("absent{i}").as_bytes())).count();
        assert!((fp as f64) / 1e5 <= 0.02, "fp rate {}", fp as f64 / 1e5);
    }

    #[test]
    fn encode_decode_round_trip() {
        let f = build_leaf_filter(&leaf(100), 10, 4096);
        let page = f.encode(4096);
        assert_eq!(page.len(), 4096);
        assert_eq!(Filter::decode(&page).unwrap(), f);
        assert!(Filter::decode(&[0u8; 64]).is_err());
    }

    #[test]
    fn filter_capped_to_page() {
        let f = build_leaf_filter(&leaf(10_000), 10, 4096);
        assert!(f.encode(4096).len() == 4096);
        assert!(leaf(10_000).iter().all(|u| f.contains(&u.key)));
    }
}
