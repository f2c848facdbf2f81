//! Small deterministic generator for parameter initialization and synthetic
//! test images. The parameter streams are part of the artifact's determinism
//! contract (same seed, same bits, on any platform), so the generator is
//! pinned here rather than taken from a crate whose stream may change
//! between versions.

/// SplitMix64. Passes through the full 64-bit state space, no zero fixpoint.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. One draw per call; the cosine twin is
    /// discarded to keep the stream layout obvious.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                let v = self.next_f64();
                let r = libm::sqrt(-2.0 * libm::log(u));
                return r * libm::cos(2.0 * core::f64::consts::PI * v);
            }
        }
    }

    /// Normal with the given std, resampled until it lands in
    /// `[-bound, bound]` (absolute, not in units of std).
    pub fn trunc_normal(&mut self, std: f64, bound: f64) -> f64 {
        loop {
            let x = self.normal() * std;
            if x.abs() <= bound {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = Rng::new(1);
        for _ in 0..1000 {
            let v = r.uniform(-2.0, 2.0);
            assert!((-2.0..2.0).contains(&v));
        }
    }

    #[test]
    fn trunc_normal_respects_bound() {
        let mut r = Rng::new(3);
        for _ in 0..1000 {
            assert!(r.trunc_normal(1.0, 1.5).abs() <= 1.5);
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = Rng::new(11);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
