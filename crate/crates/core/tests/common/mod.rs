#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use turtlekv::{Config, Store};

pub type Oracle = BTreeMap<Vec<u8>, Vec<u8>>;

#[derive(Clone, Debug)]
pub enum Op {
    Put(Vec<u8>, Vec<u8>),
    Delete(Vec<u8>),
}

pub fn small(chi: usize) -> Config {
    Config {
        node_page_bytes: 4096,
        leaf_page_bytes: 16384,
        block_bytes: 1024,
        pivot_capacity: 8,
        chi,
        wal_block_bytes: 4096,
        wal_poll_ms: 0,
        sync: false,
        pool_max_pages: 1 << 16,
        ..Config::default()
    }
}

pub fn key(i: u32) -> Vec<u8> {
    format!("key{i:06}").into_bytes()
}

pub fn random_ops(seed: u64, n: usize, keyspace: u32) -> Vec<Op> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = key(rng.gen_range(0..keyspace));
            if rng.gen_bool(0.15) {
                Op::Delete(k)
            } else {
                Op::Put(k, vec![(i % 251) as u8; rng.gen_range(1..120)])
            }
        })
        .collect()
}

pub fn apply(oracle: &mut Oracle, op: &Op) {
    match op {
        Op::Put(k, v) => oracle.insert(k.clone(), v.clone()),
        Op::Delete(k) => oracle.remove(k),
    };
}

pub fn run(s: &Store, op: &Op) -> turtlekv::Result<u64> {
    match op {
        Op::Put(k, v) => s.put(k, v),
        Op::Delete(k) => s.delete(k),
    }
}

pub fn contents(s: &Store) -> Oracle {
    s.scan(b"", usize::MAX).unwrap().into_iter().map(|(k, v)| (k.to_vec(), v.to_vec())).collect()
}
