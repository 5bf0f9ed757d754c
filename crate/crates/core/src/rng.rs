//! Portable seeded random stream.
//!
//! Every random draw in the toolkit goes through [`SeededRng`], so masks,
//! corruptions and phantoms reproduce bit-for-bit from a 64-bit seed in any
//! language that implements the same recipe:
//!
//! * generator: ChaCha with 8 rounds, keyed by `rand_core`'s `seed_from_u64`
//!   (PCG32 expansion of the seed into the 32-byte key);
//! * `below(n)`: draw `u64` words, reject those `>= 2^64 - (2^64 mod n)`,
//!   return `word mod n`;
//! * `uniform()`: top 53 bits of one word, scaled by `2^-53` (in `[0, 1)`);
//! * `normal()`: Box–Muller on two uniforms `u1, u2`:
//!   `sqrt(-2 ln(1 - u1)) · cos(2π u2)`;
//! * `sign()`: `+1` if the lowest bit of one word is zero, else `-1`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let w = self.next_u64();
            if w <= zone {
                return w % n;
            }
        }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `count` distinct values from `0..n` by a partial Fisher–Yates shuffle,
    /// in draw order.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

/// Derives an independent stream seed from a base seed and a tag
/// (SplitMix64 finalizer over `base ^ tag·φ`).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
