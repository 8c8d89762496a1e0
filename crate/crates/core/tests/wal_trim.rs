mod common;

use common::*;
use turtlekv::Store;

#[test]
fn log_stays_bounded_and_recovers_after_trims() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let s = Store::open(d.path(), cfg.clone()).unwrap();
    let mut oracle = Oracle::new();
    let mut peak = 0;
    for op in random_ops(5, 30_000, 3000) {
        run(&s, &op).unwrap();
        apply(&mut oracle, &op);
        peak = peak.max(std::fs::metadata(d.path().join("WAL")).unwrap().len());
    }
    assert!(peak < 64 * cfg.wal_block_bytes as u64, "log grew to {peak} bytes");
    s.sync_wal().unwrap();
    s.simulate_crash();
    let s = Store::open(d.path(), cfg).unwrap();
    assert_eq!(contents(&s), oracle);
}
