use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::noise::NoiseModel;
use super::objective::{DistanceObjective, SineObjective};
use crate::error::{invalid, Error, Result};
use crate::hash::derive_seed;
use crate::math::{self, dot, norm_sq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Distance to a hidden optimum on a ball.
    ConvexLipschitz,
    /// Separable quadratic plus sine.
    NonconvexSmooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `η = step_scale`.
    Fixed,
    /// `η = D / (G √T)`.
    DOverGSqrtT,
    /// `η = step_scale / √T`.
    ThetaInvSqrtT,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Random,
    Optimum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub objective: ObjectiveKind,
    pub dimension: usize,
    pub horizon: usize,
    pub alignment: f64,
    pub rho: f64,
    pub sigma_sq: f64,
    pub lipschitz: f64,
    pub diameter: f64,
    /// `a` in the nonconvex objective.
    pub sine_amplitude: f64,
    /// Smoothness constant; defaults to `1 + a`.
    pub smoothness: Option<f64>,
    pub step_rule: StepRule,
    pub step_scale: f64,
    /// Nonconvex starts are uniform in `[-init_spread, init_spread]^d`.
    pub init_spread: f64,
    pub start: Start,
    pub seed: u64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self::convex()
    }
}

impl LabConfig {
    pub fn convex() -> Self {
        Self {
            objective: ObjectiveKind::ConvexLipschitz,
            dimension: 10,
            horizon: 1000,
            alignment: 1.0,
            rho: 1.0,
            sigma_sq: 0.25,
            lipschitz: 1.0,
            diameter: 2.0,
            sine_amplitude: 2.0,
            smoothness: None,
            step_rule: StepRule::DOverGSqrtT,
            step_scale: 1.0,
            init_spread: 3.0,
            start: Start::Random,
            seed: 0,
        }
    }

    pub fn nonconvex() -> Self {
        Self {
            objective: ObjectiveKind::NonconvexSmooth,
            alignment: 0.8,
            rho: 1.0,
            sigma_sq: 1.0,
            step_rule: StepRule::ThetaInvSqrtT,
            step_scale: 0.5,
            ..Self::convex()
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            mu: self.alignment,
            rho: self.rho,
            sigma_sq: self.sigma_sq,
        }
    }

    pub fn smoothness_constant(&self) -> f64 {
        self.smoothness.unwrap_or(1.0 + self.sine_amplitude.abs())
    }

    pub fn step_size(&self) -> f64 {
        let sqrt_t = math::sqrt(self.horizon as f64);
        match self.step_rule {
            StepRule::Fixed => self.step_scale,
            StepRule::DOverGSqrtT => self.diameter / (self.lipschitz * sqrt_t),
            StepRule::ThetaInvSqrtT => self.step_scale / sqrt_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise().validate()?;
        if self.dimension == 0 || self.horizon == 0 {
            return Err(invalid("dimension and horizon must be positive"));
        }
        for (name, v) in [
            ("lipschitz", self.lipschitz),
            ("diameter", self.diameter),
            ("step_scale", self.step_scale),
            ("init_spread", self.init_spread),
            ("smoothness", self.smoothness_constant()),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(alloc::format!("{name} must be positive")));
            }
        }
        if !self.sine_amplitude.is_finite() {
            return Err(invalid("sine_amplitude must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub objective: ObjectiveKind,
    pub step_size: f64,
    /// `F(p_t)` for t = 1..=T.
    pub values: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    /// Distance to the (global) minimizer.
    pub dist_to_opt: Vec<f64>,
    /// Minimum objective value.
    pub optimum_value: f64,
    /// `F(p̄_T) − F*` for the averaged iterate.
    pub averaged_suboptimality: f64,
    /// `(1/T) Σ ‖∇F(p_t)‖²`.
    pub avg_grad_norm_sq: f64,
    /// `Σ (F(p_t) − F*)`.
    pub regret: f64,
    /// Convex runs: `(D²/(2η) + ηT(ρG² + σ²)/2) / μ`; for exact gradients
    /// this is `D²/(2η) + ηG²T/2` and holds on every run.
    pub regret_bound: Option<f64>,
    /// Nonconvex runs: `2(F(p_1) − F_inf)/(μTη) + Lσ²η/μ`.
    pub rate_bound: Option<f64>,
    /// The rate bound's derivation needs `Lηρ ≤ μ`.
    pub rate_bound_applicable: bool,
    pub step_checks: usize,
    pub step_violations: usize,
    pub max_step_excess: f64,
    /// `F(p_t)` never increased.
    pub monotone: bool,
}

impl Trace {
    /// The quantity whose decay rate is studied.
    pub fn measured(&self) -> f64 {
        match self.objective {
            ObjectiveKind::ConvexLipschitz => self.averaged_suboptimality,
            ObjectiveKind::NonconvexSmooth => self.avg_grad_norm_sq,
        }
    }

    pub fn regret_within_bound(&self) -> Option<bool> {
        self.regret_bound.map(|b| self.regret <= b)
    }

    pub fn rate_within_bound(&self) -> Option<bool> {
        self.rate_bound.map(|b| self.avg_grad_norm_sq <= b)
    }
}

fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = math::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn step_tolerance(terms: &[f64]) -> f64 {
    1e-9 * terms.iter().fold(1.0f64, |m, t| m.max(t.abs()))
}

fn rose(before: f64, after: f64) -> bool {
    after > before + 1e-12 * before.abs().max(1.0)
}

fn check_finite(p: &[f64], step: usize) -> Result<()> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Simulation { step })
    }
}

/// Projected stochastic subgradient descent on the distance objective.
pub fn simulate_convex(config: &LabConfig) -> Result<Trace> {
    config.validate()?;
    if config.objective != ObjectiveKind::ConvexLipschitz {
        return Err(invalid("simulate_convex needs the convex objective"));
    }
    let d = config.dimension;
    let t_max = config.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "convex-setup", 0));
    let radius = config.diameter / 2.0;
    let offset = Uniform::new(0.0, radius / 2.0).unwrap().sample(&mut rng);
    let obj = DistanceObjective {
        optimum: random_direction(d, &mut rng).into_iter().map(|x| x * offset).collect(),
        center: vec![0.0; d],
        radius,
    };
    let mut p = match config.start {
        Start::Optimum => obj.optimum.clone(),
        Start::Random => random_direction(d, &mut rng).into_iter().map(|x| x * radius).collect(),
    };
    let eta = config.step_size();
    let noise = config.noise();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "convex-noise", 0));
    let mut trace = empty_trace(ObjectiveKind::ConvexLipschitz, eta, t_max);
    let mut sum = vec![0.0; d];
    for step in 0..t_max {
        let f = obj.value(&p);
        let grad = obj.subgradient(&p);
        trace.values.push(f);
        trace.grad_norm_sq.push(norm_sq(&grad));
        trace.dist_to_opt.push(f);
        trace.regret += f;
        for (s, x) in sum.iter_mut().zip(&p) {
            *s += x;
        }
        let g = noise.sample(&grad, &mut noise_rng);
        let moved: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x - eta * gi).collect();
        let next = obj.project(&moved);
        check_finite(&next, step + 1)?;

        let diff: Vec<f64> = p.iter().zip(&obj.optimum).map(|(x, o)| x - o).collect();
        let lhs = math::dist_sq(&next, &obj.optimum);
        let a = norm_sq(&diff);
        let b = 2.0 * eta * dot(&g, &diff);
        let c = eta * eta * norm_sq(&g);
        record_step_check(&mut trace, lhs - (a - b + c), &[lhs, a, b, c]);
        if rose(f, obj.value(&next)) {
            trace.monotone = false;
        }
        p = next;
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / t_max as f64).collect();
    trace.optimum_value = 0.0;
    trace.averaged_suboptimality = obj.value(&avg);
    trace.avg_grad_norm_sq = trace.grad_norm_sq.iter().sum::<f64>() / t_max as f64;
    let g2 = config.lipschitz * config.lipschitz;
    trace.regret_bound = Some(
        (config.diameter * config.diameter / (2.0 * eta)
            + eta * t_max as f64 * (noise.rho * g2 + noise.sigma_sq) / 2.0)
            / noise.mu,
    );
    Ok(trace)
}

/// Stochastic gradient descent on the sine objective.
pub fn simulate_nonconvex(config: &LabConfig) -> Result<Trace> {
    config.validate()?;
    if config.objective != ObjectiveKind::NonconvexSmooth {
        return Err(invalid("simulate_nonconvex needs the nonconvex objective"));
    }
    let d = config.dimension;
    let t_max = config.horizon;
    let obj = SineObjective {
        amplitude: config.sine_amplitude,
    };
    let l = config.smoothness_constant();
    let x_min = obj.coordinate_minimizer();
    let minimizer = vec![x_min; d];
    let f_inf = obj.infimum(d);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "nonconvex-setup", 0));
    let mut p: Vec<f64> = match config.start {
        Start::Optimum => minimizer.clone(),
        Start::Random => {
            let u = Uniform::new_inclusive(-config.init_spread, config.init_spread).unwrap();
            (0..d).map(|_| u.sample(&mut rng)).collect()
        }
    };
    let eta = config.step_size();
    let noise = config.noise();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "nonconvex-noise", 0));
    let mut trace = empty_trace(ObjectiveKind::NonconvexSmooth, eta, t_max);
    let f1 = obj.value(&p);
    let mut f = f1;
    for step in 0..t_max {
        let grad = obj.gradient(&p);
        trace.values.push(f);
        trace.grad_norm_sq.push(norm_sq(&grad));
        trace.dist_to_opt.push(math::sqrt(math::dist_sq(&p, &minimizer)));
        trace.regret += f - f_inf;
        let g = noise.sample(&grad, &mut noise_rng);
        let next: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x - eta * gi).collect();
        check_finite(&next, step + 1)?;
        let f_next = obj.value(&next);
        let b = eta * dot(&grad, &g);
        let c = l / 2.0 * eta * eta * norm_sq(&g);
        record_step_check(&mut trace, f_next - (f - b + c), &[f_next, f, b, c]);
        if rose(f, f_next) {
            trace.monotone = false;
        }
        p = next;
        f = f_next;
    }
    trace.optimum_value = f_inf;
    trace.avg_grad_norm_sq = trace.grad_norm_sq.iter().sum::<f64>() / t_max as f64;
    trace.averaged_suboptimality = f - f_inf;
    trace.rate_bound = Some(2.0 * (f1 - f_inf) / (noise.mu * t_max as f64 * eta) + l * noise.sigma_sq * eta / noise.mu);
    trace.rate_bound_applicable = l * eta * noise.rho <= noise.mu;
    Ok(trace)
}

fn empty_trace(objective: ObjectiveKind, eta: f64, t_max: usize) -> Trace {
    Trace {
        objective,
        step_size: eta,
        values: Vec::with_capacity(t_max),
        grad_norm_sq: Vec::with_capacity(t_max),
        dist_to_opt: Vec::with_capacity(t_max),
        optimum_value: 0.0,
        averaged_suboptimality: 0.0,
        avg_grad_norm_sq: 0.0,
        regret: 0.0,
        regret_bound: None,
        rate_bound: None,
        rate_bound_applicable: false,
        step_checks: 0,
        step_violations: 0,
        max_step_excess: f64::NEG_INFINITY,
        monotone: true,
    }
}

fn record_step_check(trace: &mut Trace, excess: f64, terms: &[f64]) {
    trace.step_checks += 1;
    trace.max_step_excess = trace.max_step_excess.max(excess);
    if excess > step_tolerance(terms) {
        trace.step_violations += 1;
    }
}

/// Run either simulation according to `config.objective`.
pub fn simulate(config: &LabConfig) -> Result<Trace> {
    match config.objective {
        ObjectiveKind::ConvexLipschitz => simulate_convex(config),
        ObjectiveKind::NonconvexSmooth => simulate_nonconvex(config),
    }
}
