use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hash::derive_seed;
use crate::math;

/// Stochastic gradient oracle
///
/// `g = μ∇F + ε·sqrt(ρ − μ²)·∇F + sqrt(σ²/d)·z` with `ε ~ N(0, 1)` and
/// `z ~ N(0, I_d)` independent. Then `E⟨g, ∇F⟩ = μ‖∇F‖²` and
/// `E‖g‖² = ρ‖∇F‖² + σ²`, so the alignment and second-moment conditions
/// hold with equality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mu: f64,
    pub rho: f64,
    pub sigma_sq: f64,
}

impl NoiseModel {
    pub fn new(mu: f64, rho: f64, sigma_sq: f64) -> Result<Self> {
        let m = Self { mu, rho, sigma_sq };
        m.validate()?;
        Ok(m)
    }

    pub fn exact() -> Self {
        Self {
            mu: 1.0,
            rho: 1.0,
            sigma_sq: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(invalid("alignment mu must be in (0, 1]"));
        }
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite() && self.rho.is_finite()) {
            return Err(invalid("sigma_sq must be nonnegative and rho finite"));
        }
        if self.rho < self.mu * self.mu {
            return Err(invalid("second moment rho must be at least mu^2"));
        }
        Ok(())
    }

    pub fn sample(&self, grad: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = grad.len() as f64;
        let eps: f64 = StandardNormal.sample(rng);
        let scale = self.mu + eps * math::sqrt(self.rho - self.mu * self.mu);
        let iso = math::sqrt(self.sigma_sq / d);
        grad.iter()
            .map(|g| {
                let z: f64 = if iso > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                scale * g + iso * z
            })
            .collect()
    }
}

/// One draw of the noisy gradient for `step` of run `seed`.
pub fn make_noisy_gradient(
    true_grad: &[f64],
    mu: f64,
    rho: f64,
    sigma_sq: f64,
    seed: u64,
    step: u64,
) -> Result<Vec<f64>> {
    let model = NoiseModel::new(mu, rho, sigma_sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise", step));
    Ok(model.sample(true_grad, &mut rng))
}
