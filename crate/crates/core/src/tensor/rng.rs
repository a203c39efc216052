//! Seeded random source.
//!
//! The stream is a ChaCha8 generator keyed by a 64-bit seed. Uniform doubles
//! take the top 53 bits of one `u64` draw; normals come from one Box-Muller
//! pair (cosine branch) per sample. The same seed therefore replays the same
//! scalar sequence bit-for-bit on every run of this implementation.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TensorError;

pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this generator was last (re)initialized with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rewind to the start of the stream for `seed`.
    pub fn reseed(&mut self, seed: u64) {
        *self = Self::new(seed);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)` (`lo` when the interval is degenerate).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Normal draw via Box-Muller; consumes exactly two uniform draws.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let mut u1 = self.next_f64();
        while u1 == 0.0 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        mean + std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        for i in (1..xs.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            xs.swap(i, j);
        }
    }
}

impl std::fmt::Debug for SeededRng {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SeededRng(seed={})", self.seed)
    }
}

/// Sampling distribution for [`super::rng_fill`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

impl Dist {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Uniform { lo, hi }
    }

    pub fn normal(mean: f64, std: f64) -> Self {
        Dist::Normal { mean, std }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        match *self {
            Dist::Uniform { lo, hi } => {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(TensorError::InvalidDistribution(format!(
                        "uniform requires finite lo <= hi, got lo={lo}, hi={hi}"
                    )));
                }
            }
            Dist::Normal { mean, std } => {
                if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(TensorError::InvalidDistribution(format!(
                        "normal requires finite mean and std >= 0, got mean={mean}, std={std}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn sample(&self, rng: &mut SeededRng) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => rng.uniform(lo, hi),
            Dist::Normal { mean, std } => rng.normal(mean, std),
        }
    }
}
