use crate::error::{Error, Result};

/// Least-squares fit of `ln y = intercept + slope * ln n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    /// `ln y - fitted`, in input order.
    pub residuals: Vec<f64>,
}

impl Regression {
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

/// Ordinary least squares on `(ln n, ln distance)`.
pub fn convergence_regression(ns: &[f64], distances: &[f64]) -> Result<Regression> {
    if ns.len() != distances.len() {
        return Err(Error::input("market sizes and distances differ in length"));
    }
    let mut distinct: Vec<f64> = ns.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::input("regression needs at least three distinct market sizes"));
    }
    if ns.iter().chain(distances).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::input("market sizes and distances must be positive and finite"));
    }
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(&y).map(|(a, b)| b - intercept - slope * a).collect();
    Ok(Regression {
        slope,
        intercept,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_root_n_law() {
        let ns = [100.0, 400.0, 1600.0];
        let d: Vec<f64> = ns.iter().map(|n: &f64| 1.3 / n.sqrt()).collect();
        let r = convergence_regression(&ns, &d).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12);
        assert!((r.intercept - 1.3f64.ln()).abs() < 1e-12);
        assert!(r.residuals.iter().all(|e| e.abs() < 1e-12));
        assert!((r.predict(6400.0) - 1.3 / 80.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(convergence_regression(&[1.0, 2.0], &[1.0, 1.0]).is_err());
        assert!(convergence_regression(&[1.0, 1.0, 2.0, 2.0], &[1.0; 4]).is_err());
        assert!(convergence_regression(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
        assert!(convergence_regression(&[1.0, 2.0, 3.0], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_power_laws(c in 0.01f64..100.0, p in -2.0f64..2.0) {
            let ns = [10.0, 50.0, 300.0, 2000.0];
            let d: Vec<f64> = ns.iter().map(|n: &f64| c * n.powf(p)).collect();
            let r = convergence_regression(&ns, &d).unwrap();
            prop_assert!((r.slope - p).abs() < 1e-9);
            prop_assert!(r.residuals.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
