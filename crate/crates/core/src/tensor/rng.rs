use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::Result;

/// SplitMix64 generator.
///
/// State advances by the golden-ratio increment `0x9E3779B97F4A7C15` and each
/// output is the state passed through the standard two-multiply finalizer.
/// Outputs are identical on every platform for a given seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
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

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` by rejection, free of modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Standard normal pair via Box-Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on `[-1, 1)`.
    Uniform,
    /// Standard normal.
    Gaussian,
}

/// Seeded random tensor. Values are generated in `f64` and rounded to `T`.
pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64, dist: Distribution) -> Result<Tensor<T>> {
    let mut rng = SplitMix64::new(seed);
    let mut spare: Option<f64> = None;
    Tensor::from_fn(shape, |_| {
        let v = match dist {
            Distribution::Uniform => 2.0 * rng.next_f64() - 1.0,
            Distribution::Gaussian => match spare.take() {
                Some(v) => v,
                None => {
                    let (a, b) = rng.gaussian_pair();
                    spare = Some(b);
                    a
                }
            },
        };
        T::from_f64(v)
    })
}
