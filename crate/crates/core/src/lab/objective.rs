use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// `F(p) = ‖p − p*‖` restricted to the ball `‖p − center‖ ≤ radius`.
/// Convex and 1-Lipschitz with minimum 0 at `p*`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceObjective {
    pub optimum: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl DistanceObjective {
    pub fn value(&self, p: &[f64]) -> f64 {
        math::sqrt(math::dist_sq(p, &self.optimum))
    }

    /// A subgradient; zero at the optimum.
    pub fn subgradient(&self, p: &[f64]) -> Vec<f64> {
        let r = self.value(p);
        if r == 0.0 {
            return vec![0.0; p.len()];
        }
        p.iter().zip(&self.optimum).map(|(x, o)| (x - o) / r).collect()
    }

    /// Euclidean projection onto the feasible ball.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        project_ball(p, &self.center, self.radius)
    }
}

pub fn project_ball(p: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let r = math::sqrt(math::dist_sq(p, center));
    // A few ulps of slack keep projection idempotent under rounding.
    if r <= radius * (1.0 + 4.0 * f64::EPSILON) {
        return p.to_vec();
    }
    let s = radius / r;
    p.iter().zip(center).map(|(x, c)| c + (x - c) * s).collect()
}

/// `F(p) = Σ pᵢ²/2 + a·sin(pᵢ)`: smooth with `L = 1 + a`, nonconvex for
/// `a > 1`, bounded below.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineObjective {
    pub amplitude: f64,
}

impl SineObjective {
    pub fn value(&self, p: &[f64]) -> f64 {
        p.iter().map(|x| x * x / 2.0 + self.amplitude * libm::sin(*x)).sum()
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x + self.amplitude * libm::cos(*x)).collect()
    }

    pub fn smoothness(&self) -> f64 {
        1.0 + self.amplitude.abs()
    }

    /// Global minimizer of the one-dimensional term, by grid search and
    /// Newton refinement.
    pub fn coordinate_minimizer(&self) -> f64 {
        let a = self.amplitude;
        let f = |x: f64| x * x / 2.0 + a * libm::sin(x);
        // Minimizers satisfy |x| ≤ |a|.
        let span = a.abs() + 1.0;
        let n = 20_000;
        let mut best = 0.0;
        let mut best_f = f64::INFINITY;
        for i in 0..=n {
            let x = -span + 2.0 * span * i as f64 / n as f64;
            let v = f(x);
            if v < best_f {
                best = x;
                best_f = v;
            }
        }
        let mut x = best;
        for _ in 0..50 {
            let g = x + a * libm::cos(x);
            let h = 1.0 - a * libm::sin(x);
            if h <= 0.0 {
                break;
            }
            let next = x - g / h;
            if (next - x).abs() < 1e-15 {
                x = next;
                break;
            }
            x = next;
        }
        if f(x) <= best_f {
            x
        } else {
            best
        }
    }

    pub fn infimum(&self, dimension: usize) -> f64 {
        let x = self.coordinate_minimizer();
        dimension as f64 * (x * x / 2.0 + self.amplitude * libm::sin(x))
    }
}
