//! Stationary law of the pure model's average opinion on the lattice
//! `{-1, -1 + 2/n, ..., 1}`.

use crate::error::Result;

use super::pure::LuxPureParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeStructure {
    UnimodalAtZero,
    Bimodal,
}

impl ModeStructure {
    pub fn label(&self) -> &'static str {
        match self {
            ModeStructure::UnimodalAtZero => "unimodal",
            ModeStructure::Bimodal => "bimodal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub lattice: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub log_probabilities: Vec<f64>,
    pub mode_structure: ModeStructure,
}

impl StationaryDistribution {
    pub fn n(&self) -> usize {
        self.lattice.len() - 1
    }

    /// Lattice index of `vbar`, if it is a lattice point up to rounding.
    pub fn index_of(&self, vbar: f64) -> Option<usize> {
        let n = self.n() as f64;
        let k = (0.5 * (1.0 + vbar) * n).round();
        if k < 0.0 || k > n || (self.lattice[k as usize] - vbar).abs() > 1e-9 {
            return None;
        }
        Some(k as usize)
    }
}

/// `ln k!` for `k = 0..=n`.
pub fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `ln sum exp(x)` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Stationary law `P(v) ∝ C(n, n(1+v)/2) exp(gamma n v^2 / 2)`, evaluated in log space.
pub fn stationary_distribution(params: &LuxPureParams) -> Result<StationaryDistribution> {
    params.validate()?;
    let n = params.n;
    let lf = log_factorials(n);
    let nf = n as f64;
    let lattice: Vec<f64> = (0..=n).map(|k| (2 * k) as f64 / nf - 1.0).collect();
    let log_weights: Vec<f64> = (0..=n)
        .map(|k| {
            // Integer arithmetic keeps v exactly antisymmetric about the midpoint.
            let v = (2 * k as i64 - n as i64) as f64 / nf;
            lf[n] - lf[k] - lf[n - k] + 0.5 * params.gamma * nf * v * v
        })
        .collect();
    let norm = log_sum_exp(&log_weights);
    let log_probabilities: Vec<f64> = log_weights.iter().map(|w| w - norm).collect();
    let probabilities = log_probabilities.iter().map(|l| l.exp()).collect();
    let mid = n / 2;
    let mode_structure = if log_weights[mid + 1] > log_weights[mid] {
        ModeStructure::Bimodal
    } else {
        ModeStructure::UnimodalAtZero
    };
    Ok(StationaryDistribution {
        lattice,
        probabilities,
        log_probabilities,
        mode_structure,
    })
}

/// Total variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share a support");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lux::roots::gamma_threshold;
    use proptest::prelude::*;

    fn dist(n: usize, gamma: f64) -> StationaryDistribution {
        let beta = 0.9 * (-gamma).exp();
        stationary_distribution(&LuxPureParams::new(n, beta, gamma).unwrap()).unwrap()
    }

    #[test]
    fn mode_structure_on_both_sides_of_threshold() {
        assert_eq!(dist(100, 0.8).mode_structure, ModeStructure::UnimodalAtZero);
        assert_eq!(dist(100, 1.2).mode_structure, ModeStructure::Bimodal);
        let t = gamma_threshold(100);
        assert_eq!(dist(100, t - 1e-3).mode_structure, ModeStructure::UnimodalAtZero);
        assert_eq!(dist(100, t + 1e-3).mode_structure, ModeStructure::Bimodal);
    }

    #[test]
    fn small_lattice_by_hand() {
        // n = 2: weights C(2,k) exp(gamma * v^2) for v = -1, 0, 1.
        let g = 0.5;
        let d = dist(2, g);
        let w = [g.exp(), 2.0, g.exp()];
        let s: f64 = w.iter().sum();
        for (p, w) in d.probabilities.iter().zip(w) {
            assert!((p - w / s).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn large_market_is_finite() {
        let d = dist(100_000, 1.5);
        assert!(d.probabilities.iter().all(|p| p.is_finite()));
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn normalized_and_symmetric(k in 1usize..150, gamma in 0.05f64..3.0) {
            let d = dist(2 * k, gamma);
            let s: f64 = d.probabilities.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let n = d.n();
            for i in 0..=n {
                prop_assert!((d.probabilities[i] - d.probabilities[n - i]).abs() < 1e-12);
            }
        }

        #[test]
        fn detailed_balance(k in 1usize..150, gamma in 0.05f64..3.0) {
            let n = 2 * k;
            let beta = 0.9 * (-gamma).exp();
            let params = LuxPureParams::new(n, beta, gamma).unwrap();
            let d = stationary_distribution(&params).unwrap();
            for i in 0..n {
                let (up, _) = params.step_probabilities(d.lattice[i]);
                let (_, down) = params.step_probabilities(d.lattice[i + 1]);
                let lhs = d.probabilities[i] * up;
                let rhs = d.probabilities[i + 1] * down;
                prop_assert!((lhs - rhs).abs() < 1e-10, "i={} lhs={} rhs={}", i, lhs, rhs);
            }
        }
    }
}
