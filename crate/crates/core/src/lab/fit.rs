use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math;

/// Least-squares slope of `ln value` against `ln horizon`.
pub fn fit_rate(horizons: &[usize], values: &[f64]) -> Result<f64> {
    if horizons.len() != values.len() {
        return Err(invalid("horizons and values differ in length"));
    }
    if horizons.len() < 3 {
        return Err(invalid("need at least three horizons"));
    }
    if horizons.contains(&0) {
        return Err(invalid("horizons must be positive"));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("values must be positive and finite"));
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| math::ln(t as f64)).collect();
    let ys: Vec<f64> = values.iter().map(|&v| math::ln(v)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("horizons must not all be equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[10, 100], &[1.0, 0.1]).is_err());
        assert!(fit_rate(&[10, 100, 1000], &[1.0, 0.0, 0.1]).is_err());
        assert!(fit_rate(&[10, 10, 10], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_rate(&[10, 100, 1000], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_power_law() {
        let hs = [100, 1000, 10000];
        let vs: Vec<f64> = hs.iter().map(|&t| 3.0 * (t as f64).powf(-0.5)).collect();
        assert!((fit_rate(&hs, &vs).unwrap() + 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn recovers_any_exponent(c in 0.01f64..100.0, k in -2.0f64..2.0) {
            let hs = [10, 50, 200, 1000];
            let vs: Vec<f64> = hs.iter().map(|&t| c * (t as f64).powf(k)).collect();
            prop_assert!((fit_rate(&hs, &vs).unwrap() - k).abs() < 1e-9);
        }
    }
}
