//! Deterministic per-path random streams.
//!
//! Every path owns a ChaCha stream selected by its path index, so the
//! draw sequence depends only on (seed, path index) and never on thread
//! scheduling. Normals come from the Marsaglia polar method, Poisson
//! counts from inversion by multiplication.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream id offset for auxiliary (non-path) sampling, e.g. residual
/// sample points, so it never collides with a path stream.
const AUX_STREAM_BASE: u64 = u64::MAX - 0xFFFF;

#[derive(Clone, Debug)]
pub struct PathRng {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl PathRng {
    /// The stream for simulated path `path` under `seed`.
    pub fn for_path(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self {
            rng,
            spare_normal: None,
        }
    }

    /// An auxiliary stream (index 0..0xFFFF) for sampling tasks outside
    /// the path ensemble.
    pub fn auxiliary(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AUX_STREAM_BASE.wrapping_add(index));
        Self {
            rng,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Marsaglia polar method, with the spare
    /// value cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Poisson count by inversion (product of uniforms), chunked so the
    /// threshold never underflows.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let mut remaining = mean;
        let mut total = 0u64;
        while remaining > 0.0 {
            let chunk = remaining.min(500.0);
            remaining -= chunk;
            let threshold = (-chunk).exp();
            let mut product = 1.0;
            let mut count = 0u64;
            loop {
                product *= self.uniform();
                if product <= threshold {
                    break;
                }
                count += 1;
            }
            total += count;
        }
        total
    }

    /// Exponential with the given rate, by inverse CDF.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }
}
