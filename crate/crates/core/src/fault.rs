//! Crash injection for recovery testing.
//!
//! Storage writes consult a shared [`FaultInjector`] at named points. Once armed, the N-th
//! matching hit fails with [`Error::InjectedCrash`], optionally after writing a torn prefix of the
//! data, and every later hit fails too, so nothing more reaches disk. Dropping the store after a
//! fired crash behaves like a killed process: whatever already reached the files stays there.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::SeqCst};

use parking_lot::Mutex;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    WalBlockWrite,
    WalSync,
    PageWrite,
    ManifestPrepare,
    ManifestCommit,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 5] = [
        CrashPoint::WalBlockWrite,
        CrashPoint::WalSync,
        CrashPoint::PageWrite,
        CrashPoint::ManifestPrepare,
        CrashPoint::ManifestCommit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::WalBlockWrite => "wal-block-write",
            CrashPoint::WalSync => "wal-sync",
            CrashPoint::PageWrite => "page-write",
            CrashPoint::ManifestPrepare => "manifest-prepare",
            CrashPoint::ManifestCommit => "manifest-commit",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// What a write site must do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Fault {
    Proceed,
    /// Write a prefix of the data, then fail.
    Tear,
}

#[derive(Clone, Copy, Debug)]
struct Plan {
    point: Option<CrashPoint>,
    remaining: u64,
    torn: bool,
}

#[derive(Debug, Default)]
pub struct FaultInjector {
    plan: Mutex<Option<Plan>>,
    fired: AtomicBool,
    hits: [AtomicU64; 5],
}

impl FaultInjector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail the `skip + 1`-th hit of `point` (any point when `None`) from now on.
    pub fn arm(&self, point: Option<CrashPoint>, skip: u64, torn: bool) {
        *self.plan.lock() = Some(Plan { point, remaining: skip, torn });
    }

    pub fn disarm(&self) {
        *self.plan.lock() = None;
    }

    /// Disarms and clears a fired fault, as if the failure had been transient.
    pub fn reset(&self) {
        *self.plan.lock() = None;
        self.fired.store(false, SeqCst);
    }

    pub fn fired(&self) -> bool {
        self.fired.load(SeqCst)
    }

    /// Total hits observed at `point`, armed or not.
    pub fn hits(&self, point: CrashPoint) -> u64 {
        self.hits[point.index()].load(SeqCst)
    }

    pub(crate) fn check(&self, point: CrashPoint) -> Result<Fault> {
        if self.fired() {
            return Err(Error::InjectedCrash(point.name()));
        }
        self.hits[point.index()].fetch_add(1, SeqCst);
        let mut plan = self.plan.lock();
        let Some(p) = plan.as_mut() else {
            return Ok(Fault::Proceed);
        };
        if p.point.is_some_and(|want| want != point) {
            return Ok(Fault::Proceed);
        }
        if p.remaining > 0 {
            p.remaining -= 1;
            return Ok(Fault::Proceed);
        }
        let torn = p.torn;
        *plan = None;
        self.fired.store(true, SeqCst);
        if torn {
            Ok(Fault::Tear)
        } else {
            Err(Error::InjectedCrash(point.name()))
        }
    }
}

/// Runs `write` with the full buffer, or with a torn prefix followed by a crash.
pub(crate) fn guarded_write(
    faults: Option<&FaultInjector>,
    point: CrashPoint,
    data: &[u8],
    mut write: impl FnMut(&[u8]) -> std::io::Result<()>,
) -> Result<()> {
    let fault = match faults {
        Some(f) => f.check(point)?,
        None => Fault::Proceed,
    };
    match fault {
        Fault::Proceed => Ok(write(data)?),
        Fault::Tear => {
            write(&data[..data.len() / 2])?;
            Err(Error::InjectedCrash(point.name()))
        }
    }
}

/// A crash point that carries no data (syncs, commit markers).
pub(crate) fn checkpoint_hit(faults: Option<&FaultInjector>, point: CrashPoint) -> Result<()> {
    match faults.map(|f| f.check(point)).transpose()? {
        None | Some(Fault::Proceed) => Ok(()),
        Some(Fault::Tear) => Err(Error::InjectedCrash(point.name())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_on_nth_hit_and_stays_dead() {
        let f = FaultInjector::new();
        f.arm(Some(CrashPoint::PageWrite), 2, false);
        assert_eq!(f.check(CrashPoint::WalSync).unwrap(), Fault::Proceed);
        assert_eq!(f.check(CrashPoint::PageWrite).unwrap(), Fault::Proceed);
        assert_eq!(f.check(CrashPoint::PageWrite).unwrap(), Fault::Proceed);
        assert!(f.check(CrashPoint::PageWrite).is_err());
        assert!(f.fired());
        assert!(f.check(CrashPoint::WalSync).is_err());
    }

    #[test]
    fn torn_write_writes_half() {
        let f = FaultInjector::new();
        f.arm(None, 0, true);
        let mut written = Vec::new();
        let r = guarded_write(Some(&f), CrashPoint::WalBlockWrite, &[1u8; 10], |d| {
            written.extend_from_slice(d);
            Ok(())
        });
        assert!(r.is_err());
        assert_eq!(written.len(), 5);
    }
}
