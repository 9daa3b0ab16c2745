//! Splittable deterministic random streams.
//!
//! Every stream is a ChaCha12 generator keyed by SHA-256 of the master seed and
//! positioned on a 64-bit stream id. Splitting derives the child stream id by
//! hashing the parent id with a label, so children are a pure function of
//! `(seed, parent stream, label)` and never depend on how much the parent has
//! been consumed. Parallel work takes one child per unit of work.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"sonoseg/rng/v1");
        hasher.update(seed.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        let mut inner = ChaCha12Rng::from_seed(key);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream, deterministic in `(seed, stream, label)`.
    pub fn split(&self, label: impl AsRef<[u8]>) -> Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.stream.to_le_bytes());
        hasher.update(label.as_ref());
        let digest = hasher.finalize();
        let child = u64::from_le_bytes(digest[..8].try_into().unwrap());
        Rng::with_stream(self.seed, child)
    }

    /// Child stream for the `index`-th unit of parallel work.
    pub fn split_index(&self, label: &str, index: u64) -> Rng {
        let mut buf = Vec::with_capacity(label.len() + 9);
        buf.extend_from_slice(label.as_bytes());
        buf.push(b'#');
        buf.extend_from_slice(&index.to_le_bytes());
        self.split(buf)
    }

    /// Uniform sample in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform sample in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift with rejection keeps this unbiased.
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.inner.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal sample via Box-Muller, one pair of uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FROZEN_A: u64 = 5725713052195248178;
    const FROZEN_B: u64 = 14266967053117797484;

    fn first(mut r: Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| r.next_u64()).collect()
    }

    #[test]
    fn split_is_deterministic() {
        let root = Rng::new(1);
        assert_eq!(first(root.split("noise"), 8), first(root.split("noise"), 8));
    }

    #[test]
    fn split_labels_differ() {
        let root = Rng::new(1);
        assert_ne!(
            first(root.split("noise"), 1),
            first(root.split("geometry"), 1)
        );
    }

    #[test]
    fn split_seeds_differ() {
        assert_ne!(
            first(Rng::new(2).split("noise"), 1),
            first(Rng::new(1).split("noise"), 1)
        );
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let a = Rng::new(9);
        let mut b = Rng::new(9);
        for _ in 0..100 {
            b.next_u64();
        }
        assert_eq!(first(a.split("x"), 4), first(b.split("x"), 4));
    }

    #[test]
    fn known_first_values_are_stable() {
        // guards stream stability across platforms and dependency upgrades
        let mut r = Rng::new(42).split("frozen");
        let v: Vec<u64> = (0..2).map(|_| r.next_u64()).collect();
        assert_eq!(v, [FROZEN_A, FROZEN_B]);
    }

    #[test]
    fn uniform_and_below_ranges() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(5);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }
}
