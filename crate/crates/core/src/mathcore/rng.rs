//! Seeded random source.
//!
//! ChaCha8 keyed by the 64-bit run seed. Independent substreams are obtained
//! with [`SeededRng::fork`], which selects a ChaCha stream id derived from a
//! label, so a substream never depends on how much of another one was consumed.
//! Uniform reals use the top 53 bits of one `u64` draw.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// FNV-1a, used to turn substream labels into stream ids.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named purpose ("init", "shuffle", ...).
    pub fn fork(&self, label: &str) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(label_hash(label));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo + (hi - lo) * self.unit()).min(hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_tensor<T: Real>(&mut self, rows: usize, cols: usize, bound: f64) -> Tensor<T> {
        Tensor::from_fn(rows, cols, |_, _| T::of(self.uniform(-bound, bound)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forks_are_independent_of_parent_consumption() {
        let a = SeededRng::new(3);
        let mut b = SeededRng::new(3);
        b.next_u64();
        let mut fa = a.fork("init");
        let mut fb = b.fork("init");
        assert_eq!(fa.next_u64(), fb.next_u64());
        let mut other = a.fork("shuffle");
        assert_ne!(a.fork("init").next_u64(), other.next_u64());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = SeededRng::new(1);
        for _ in 0..10_000 {
            let v = r.uniform(-0.003, 0.003);
            assert!((-0.003..=0.003).contains(&v));
        }
    }
}
