//! Counter-based pseudo-random generation.
//!
//! Every draw is a pure function of `(seed, counter)`: there is no mutable
//! generator state, so values are independent of evaluation order and thread
//! assignment. The stream is the SplitMix64 sequence: the n-th output is the
//! murmur-style finalizer applied to `seed + n * GOLDEN`. Gaussian variates
//! come from Box–Muller over two consecutive counters.

pub const GENERATOR_NAME: &str = "splitmix64-boxmuller";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The n-th word of the SplitMix64 stream with the given seed.
#[inline]
pub fn stream_u64(seed: u64, n: u64) -> u64 {
    let mut z = seed.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed, e.g. one seed per noise level.
#[inline]
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream_u64(seed ^ 0xD1B5_4A32_D192_ED03, index)
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn stream_open01(seed: u64, n: u64) -> f64 {
    // 53 mantissa bits, offset by half an ulp so 0 and 1 are unreachable.
    ((stream_u64(seed, n) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal variate at counter `n` (Box–Muller, cosine branch).
#[inline]
pub fn stream_normal(seed: u64, n: u64) -> f64 {
    let u1 = stream_open01(seed, 2 * n);
    let u2 = stream_open01(seed, 2 * n + 1);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Fill `out` with standard normals at counters `base..base + out.len()`.
pub fn fill_normal(seed: u64, base: u64, out: &mut [f64]) {
    for (j, v) in out.iter_mut().enumerate() {
        *v = stream_normal(seed, base + j as u64);
    }
}

/// Minimal stateful view over the counter stream, for call sites that just
/// want "the next value" semantics (training loops, shuffles).
#[derive(Debug, Clone)]
pub struct Stream {
    seed: u64,
    next: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { seed, next: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = stream_u64(self.seed, self.next);
        self.next += 1;
        v
    }

    pub fn next_open01(&mut self) -> f64 {
        let v = stream_open01(self.seed, self.next);
        self.next += 1;
        v
    }

    pub fn next_normal(&mut self) -> f64 {
        let v = stream_normal(self.seed, self.next);
        self.next += 1;
        v
    }

    /// Uniform index in `0..bound` via 128-bit multiply (no modulo bias worth
    /// caring about at desk scale; bound is far below 2^32).
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        let v = self.next_u64();
        ((v as u128 * bound as u128) >> 64) as usize
    }

    /// Deterministic Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
