use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eval::Objective;

/// `f(x) = ‖x − 1‖² + w`, `w ~ N(0, σ²)` drawn from the evaluation seed.
pub fn noisy_quadratic_eval(x: &[f64], sigma: f64, seed: u64) -> f64 {
    let mean = NoisyQuadratic::true_value(x);
    if sigma == 0.0 {
        return mean;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    mean + sigma * z
}

/// Convex quadratic with additive Gaussian noise; minimizer `1`, minimum 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyQuadratic {
    pub dim: usize,
    pub sigma: f64,
}

impl NoisyQuadratic {
    pub fn new(dim: usize, sigma: f64) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        assert!(
            sigma >= 0.0 && sigma.is_finite(),
            "noise level must be finite and nonnegative"
        );
        Self { dim, sigma }
    }

    /// Noiseless value `‖x − 1‖²`.
    pub fn true_value(x: &[f64]) -> f64 {
        x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum()
    }

    pub fn minimizer(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }
}

impl Default for NoisyQuadratic {
    fn default() -> Self {
        Self::new(5, 3.0)
    }
}

impl Objective for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], seed: u64) -> f64 {
        noisy_quadratic_eval(x, self.sigma, seed)
    }

    fn noise_sigma_hint(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn noiseless_values() {
        assert_eq!(noisy_quadratic_eval(&[1.0; 5], 0.0, 3), 0.0);
        assert_eq!(noisy_quadratic_eval(&[0.0; 5], 0.0, 3), 5.0);
    }

    #[test]
    fn noise_moments() {
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| noisy_quadratic_eval(&[0.0; 5], 3.0, seed::derive(1, 0, i)))
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 5.0).abs() <= 0.1, "mean {mean}");
        assert!((sd - 3.0).abs() <= 0.05, "sd {sd}");
    }

    #[test]
    fn replayable() {
        let q = NoisyQuadratic::default();
        let x = [0.3, 0.1, -2.0, 4.0, 1.0];
        assert_eq!(q.eval(&x, 77).to_bits(), q.eval(&x, 77).to_bits());
        assert_ne!(q.eval(&x, 77), q.eval(&x, 78));
    }
}
