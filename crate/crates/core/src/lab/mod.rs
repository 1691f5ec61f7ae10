//! Numerical lab for stochastic gradient methods with imperfect gradient
//! oracles.
//!
//! The oracle returns `g` with `E⟨g, ∇F⟩ = μ‖∇F‖²` and
//! `E‖g‖² ≤ ρ‖∇F‖² + σ²`. Two objectives are provided: a convex Lipschitz
//! one, optimized by projected subgradient steps, and a smooth nonconvex
//! one, optimized by plain steps. Every step checks the corresponding
//! one-step descent inequality. [`rate_study`] fits the decay exponent of the
//! averaged suboptimality (convex) or the average squared gradient norm
//! (nonconvex) over a range of horizons.

mod fit;
mod noise;
mod objective;
mod simulate;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use fit::fit_rate;
pub use noise::{make_noisy_gradient, NoiseModel};
pub use objective::{project_ball, DistanceObjective, SineObjective};
pub use simulate::{simulate, simulate_convex, simulate_nonconvex, LabConfig, ObjectiveKind, Start, StepRule, Trace};

use crate::error::{invalid, Result};
use crate::hash::derive_seed;

pub const DEFAULT_HORIZONS: [usize; 3] = [100, 1000, 10000];
pub const DEFAULT_STUDY_SEEDS: usize = 50;
/// Accepted window for the fitted exponent.
pub const RATE_WINDOW: (f64, f64) = (-0.6, -0.4);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub step_size: f64,
    /// Mean of [`Trace::measured`] over seeds.
    pub mean_measured: f64,
    pub mean_regret: f64,
    pub regret_bound: Option<f64>,
    pub step_violations: usize,
    /// Per-seed bound checks that were applicable and failed.
    pub bound_failures: usize,
    pub bound_checks: usize,
    /// Runs whose objective value never increased.
    pub monotone_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub objective: ObjectiveKind,
    pub seeds: usize,
    pub horizons: Vec<HorizonSummary>,
    pub exponent: f64,
    pub window: (f64, f64),
}

impl RateStudy {
    pub fn exponent_in_window(&self) -> bool {
        self.exponent >= self.window.0 && self.exponent <= self.window.1
    }

    pub fn step_violations(&self) -> usize {
        self.horizons.iter().map(|h| h.step_violations).sum()
    }

    pub fn bound_failures(&self) -> usize {
        self.horizons.iter().map(|h| h.bound_failures).sum()
    }
}

/// Config for seed number `index` of a study built on `base`.
pub fn study_seed(base: &LabConfig, index: usize) -> u64 {
    derive_seed(base.seed, "lab-seed", index as u64)
}

/// Run `seeds` independent simulations at each horizon and fit the rate.
///
/// Bound checks: nonconvex runs compare each seed's average squared gradient
/// norm with its plug-in bound when `Lηρ ≤ μ`; convex runs compare regret
/// with its bound per seed when gradients are exact, and the seed-mean
/// regret otherwise.
pub fn rate_study(base: &LabConfig, horizons: &[usize], seeds: usize) -> Result<RateStudy> {
    if seeds == 0 {
        return Err(invalid("rate study needs at least one seed"));
    }
    base.validate()?;
    let exact = base.noise() == NoiseModel::exact();
    let mut summaries = Vec::with_capacity(horizons.len());
    for &horizon in horizons {
        let mut measured = 0.0;
        let mut regret = 0.0;
        let mut step_violations = 0;
        let mut bound_failures = 0;
        let mut bound_checks = 0;
        let mut monotone_runs = 0;
        let mut step_size = 0.0;
        let mut regret_bound = None;
        for s in 0..seeds {
            let cfg = LabConfig {
                horizon,
                seed: study_seed(base, s),
                ..base.clone()
            };
            let trace = simulate(&cfg)?;
            step_size = trace.step_size;
            regret_bound = trace.regret_bound;
            measured += trace.measured();
            regret += trace.regret;
            step_violations += trace.step_violations;
            monotone_runs += usize::from(trace.monotone);
            let check = match base.objective {
                ObjectiveKind::NonconvexSmooth if trace.rate_bound_applicable => trace.rate_within_bound(),
                ObjectiveKind::ConvexLipschitz if exact => trace.regret_within_bound(),
                _ => None,
            };
            if let Some(ok) = check {
                bound_checks += 1;
                if !ok {
                    bound_failures += 1;
                }
            }
        }
        let n = seeds as f64;
        let mean_regret = regret / n;
        if base.objective == ObjectiveKind::ConvexLipschitz && !exact {
            bound_checks += 1;
            if regret_bound.is_some_and(|b| mean_regret > b) {
                bound_failures += 1;
            }
        }
        summaries.push(HorizonSummary {
            horizon,
            step_size,
            mean_measured: measured / n,
            mean_regret,
            regret_bound,
            step_violations,
            bound_failures,
            bound_checks,
            monotone_runs,
        });
    }
    let hs: Vec<usize> = summaries.iter().map(|h| h.horizon).collect();
    let vs: Vec<f64> = summaries.iter().map(|h| h.mean_measured).collect();
    let exponent = fit_rate(&hs, &vs)?;
    Ok(RateStudy {
        objective: base.objective,
        seeds,
        horizons: summaries,
        exponent,
        window: RATE_WINDOW,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_rejects_degenerate_inputs() {
        assert!(rate_study(&LabConfig::convex(), &DEFAULT_HORIZONS, 0).is_err());
        assert!(rate_study(&LabConfig::convex(), &[100, 200], 2).is_err());
    }

    #[test]
    fn small_study_summarizes_each_horizon() {
        let s = rate_study(&LabConfig::nonconvex(), &[50, 200, 800], 4).unwrap();
        assert_eq!(s.horizons.len(), 3);
        assert!(s.horizons.iter().all(|h| h.bound_checks == 4));
        assert_eq!(s.step_violations(), 0);
        assert!(s.exponent < 0.0);
    }
}
