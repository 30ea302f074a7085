//! Counter-based deterministic random number generation.
//!
//! Every stochastic step in the crate draws from a [`CounterRng`] built from
//! an explicit seed; there is no global RNG state. Substreams for parallel
//! or per-replicate work are derived with [`CounterRng::derive`], so results
//! do not depend on evaluation order.

/// Weyl increment (golden-ratio constant) used by the counter stream.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: output i is a hash of (key, i).
///
/// Equivalent to a SplitMix64 stream keyed by the seed. Cheap to fork,
/// trivially reproducible, and stateless apart from the counter.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    ctr: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: mix(seed ^ GOLDEN),
            ctr: 0,
            spare_normal: None,
        }
    }

    /// Independent substream `stream` of the generator seeded by `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix(mix(seed ^ GOLDEN) ^ stream.wrapping_mul(GOLDEN)),
            ctr: 0,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix(self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (second draw cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u in (0, 1] so the log is finite.
        let u = 1.0 - self.next_f64();
        let v = self.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u));
        let theta = 2.0 * core::f64::consts::PI * v;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
