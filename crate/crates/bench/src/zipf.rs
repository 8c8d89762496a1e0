//! YCSB's Zipfian and scrambled-Zipfian key choosers.

use crate::rng::{fnv64, XorShift64Star};

pub const THETA: f64 = 0.99;
/// Item space of the scrambled generator and its precomputed zeta, as in YCSB.
pub const SCRAMBLED_ITEMS: u64 = 10_000_000_000;
pub const SCRAMBLED_ZETAN: f64 = 26.469_028_201_783_02;

pub fn zeta(n: u64, theta: f64) -> f64 {
    (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
}

/// Gray et al.'s rejection-free Zipfian over `[0, items)`; rank 0 is the most popular.
#[derive(Clone, Debug)]
pub struct Zipfian {
    items: u64,
    theta: f64,
    alpha: f64,
    zetan: f64,
    eta: f64,
    half_pow_theta: f64,
}

impl Zipfian {
    pub fn new(items: u64, theta: f64) -> Self {
        Self::with_zeta(items, theta, zeta(items, theta))
    }

    pub fn with_zeta(items: u64, theta: f64, zetan: f64) -> Self {
        let zeta2 = zeta(2, theta);
        Zipfian {
            items,
            theta,
            alpha: 1.0 / (1.0 - theta),
            zetan,
            eta: (1.0 - (2.0 / items as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan),
            half_pow_theta: 0.5f64.powf(theta),
        }
    }

    pub fn sample_u(&self, u: f64) -> u64 {
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < 1.0 + self.half_pow_theta {
            return 1;
        }
        ((self.items as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64).min(self.items - 1)
    }

    pub fn sample(&self, rng: &mut XorShift64Star) -> u64 {
        self.sample_u(rng.next_f64())
    }

    /// Probability that `sample` returns `rank`, by inverting the sampling formula.
    pub fn probability(&self, rank: u64) -> f64 {
        let p0 = 1.0 / self.zetan;
        let p1 = self.half_pow_theta / self.zetan;
        match rank {
            0 => p0,
            1 => p1,
            r => {
                let u_at = |x: f64| ((x / self.items as f64).powf(1.0 / self.alpha) - 1.0 + self.eta) / self.eta;
                let lo = u_at(r as f64).max(p0 + p1);
                let hi = u_at((r + 1) as f64).min(1.0);
                (hi - lo).max(0.0)
            }
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Zipfian popularity spread over `[0, items)` by hashing, so hot keys are not adjacent.
#[derive(Clone, Debug)]
pub struct ScrambledZipfian {
    items: u64,
    inner: Zipfian,
}

impl ScrambledZipfian {
    pub fn new(items: u64) -> Self {
        ScrambledZipfian { items, inner: Zipfian::with_zeta(SCRAMBLED_ITEMS, THETA, SCRAMBLED_ZETAN) }
    }

    pub fn sample(&self, rng: &mut XorShift64Star) -> u64 {
        fnv64(self.inner.sample(rng)) % self.items
    }

    /// Exact item probabilities for the first `ranks` underlying ranks; the rest of the mass is
    /// spread evenly, which the hash makes accurate to well under a percent.
    pub fn item_probabilities(&self, ranks: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.items as usize];
        let mut covered = 0.0;
        for r in 0..ranks {
            let q = self.inner.probability(r);
            p[(fnv64(r) % self.items) as usize] += q;
            covered += q;
        }
        let rest = (1.0 - covered).max(0.0) / self.items as f64;
        p.iter_mut().for_each(|x| *x += rest);
        p
    }
}
