//! Two-state herding model without trading: agents switch between pessimism
//! (state 0, opinion -1) and optimism (state 1, opinion +1).

use std::sync::Arc;

use crate::engine::{
    AgentBehavior, DemandMoments, InitialPriceLaw, InitialStateLaw, ModelSpec, PricingRule, ScalingExponents,
    SignalLaw, StateSpace,
};
use crate::error::{Error, Result};

pub const PURE_STATES: [&str; 2] = ["-1", "+1"];

#[derive(Debug, Clone, PartialEq)]
pub struct LuxPureParams {
    pub n: usize,
    pub beta: f64,
    pub gamma: f64,
    pub initial: InitialStateLaw,
}

impl LuxPureParams {
    /// Parameters with i.i.d. uniform initial opinions.
    pub fn new(n: usize, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            n,
            beta,
            gamma,
            initial: InitialStateLaw::uniform(2),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_initial(mut self, initial: InitialStateLaw) -> Self {
        self.initial = initial;
        self
    }

    /// Deterministic start with average opinion as close to `theta` as the lattice allows.
    pub fn with_initial_opinion(self, theta: f64) -> Result<Self> {
        let counts = opinion_counts(self.n, theta)?;
        Ok(self.with_initial(InitialStateLaw::Counts(counts.to_vec())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::param(format!("n must be even and at least 2, got {}", self.n)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::param(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::param(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.beta >= (-self.gamma).exp() {
            return Err(Error::param(format!(
                "beta must be below exp(-gamma) = {}, got {}",
                (-self.gamma).exp(),
                self.beta
            )));
        }
        Ok(())
    }

    /// Switching probabilities `(P(-1 -> +1), P(+1 -> -1))` at average opinion `vbar`.
    pub fn switch_probabilities(&self, vbar: f64) -> (f64, f64) {
        let e = (self.gamma * vbar).exp();
        (self.beta * e, self.beta / e)
    }

    /// Probabilities that the next event moves `vbar` up or down by `2/n`.
    pub fn step_probabilities(&self, vbar: f64) -> (f64, f64) {
        let (p12, p21) = self.switch_probabilities(vbar);
        (0.5 * (1.0 - vbar) * p12, 0.5 * (1.0 + vbar) * p21)
    }

    /// Right-hand side of the large-market opinion equation.
    pub fn limit_drift(&self, vbar: f64) -> f64 {
        pure_limit_drift(self.beta, self.gamma, vbar)
    }
}

/// `2 beta [tanh(gamma v) - v] cosh(gamma v)`.
pub fn pure_limit_drift(beta: f64, gamma: f64, vbar: f64) -> f64 {
    let a = gamma * vbar;
    2.0 * beta * (a.tanh() - vbar) * a.cosh()
}

/// Counts `(pessimists, optimists)` whose average opinion is nearest to `theta`.
pub fn opinion_counts(n: usize, theta: f64) -> Result<[u64; 2]> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::param(format!("initial opinion must lie in [-1, 1], got {theta}")));
    }
    let optimists = (0.5 * (1.0 + theta) * n as f64).round() as u64;
    Ok([n as u64 - optimists, optimists])
}

/// Average opinion `v2 - v1` of a two-state character.
pub fn pure_opinion(character: &[f64]) -> f64 {
    character[1] - character[0]
}

/// Agent behaviour of the pure herding model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuxPureBehavior {
    pub beta: f64,
    pub gamma: f64,
}

impl AgentBehavior for LuxPureBehavior {
    fn trading_intensity(&self, _: usize, _: f64, _: &[f64]) -> f64 {
        0.0
    }

    fn transition_rate(&self, _: usize, _: f64, _: &[f64]) -> f64 {
        1.0
    }

    fn transition_row(&self, state: usize, _: f64, character: &[f64], row: &mut [f64]) {
        let e = (self.gamma * pure_opinion(character)).exp();
        if state == 0 {
            let p = self.beta * e;
            row[0] = 1.0 - p;
            row[1] = p;
        } else {
            let p = self.beta / e;
            row[0] = p;
            row[1] = 1.0 - p;
        }
    }

    fn excess_demand(&self, _: usize, _: f64, _: &[f64], _: f64) -> f64 {
        0.0
    }

    fn demand_moments(&self, _: usize, _: f64, _: &[f64], _: &SignalLaw) -> Option<DemandMoments> {
        Some(DemandMoments { mean: 0.0, second: 0.0 })
    }
}

/// Finite spec of the pure model: unit transition rates, no trading, `d1 = 1`.
pub fn build_pure(params: &LuxPureParams) -> Result<ModelSpec> {
    params.validate()?;
    ModelSpec::homogeneous(
        StateSpace::new(PURE_STATES)?,
        params.n,
        ScalingExponents::new(1.0, 0.5)?,
        Arc::new(LuxPureBehavior {
            beta: params.beta,
            gamma: params.gamma,
        }),
        PricingRule::affine(1.0)?,
        SignalLaw::Constant(0.0),
    )?
    .with_initial_price(InitialPriceLaw::Fixed(0.0))
    .with_initial_states(params.initial.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        action_probabilities, character_step_probabilities, simulate_trajectory, EventKind, Simulator,
    };

    fn params() -> LuxPureParams {
        LuxPureParams::new(100, 0.3, 0.8).unwrap()
    }

    #[test]
    fn neutral_market_switches_at_beta() {
        assert_eq!(params().switch_probabilities(0.0), (0.3, 0.3));
    }

    #[test]
    fn switch_probability_at_half() {
        let (p12, _) = params().switch_probabilities(0.5);
        assert!((p12 - 0.3 * 0.4f64.exp()).abs() < 1e-15);
        assert!((p12 - 0.44755).abs() < 1e-5);
    }

    #[test]
    fn parameter_constraints() {
        assert!(LuxPureParams::new(100, 0.5, 1.0).is_err());
        assert!(LuxPureParams::new(101, 0.1, 1.0).is_err());
        assert!(LuxPureParams::new(100, 0.0, 1.0).is_err());
    }

    #[test]
    fn transition_only_market() {
        let spec = build_pure(&params()).unwrap();
        let sim = Simulator::from_counts(spec.clone(), 0.0, 0.0, vec![50, 50], 1).unwrap();
        let p = action_probabilities(&spec, sim.snapshot()).unwrap();
        assert_eq!(p.nu, 100.0);
        assert_eq!(p.p_trade, 0.0);
    }

    #[test]
    fn step_probabilities_match_engine() {
        let p = params();
        let spec = build_pure(&p).unwrap();
        for optimists in [0u64, 13, 50, 77, 100] {
            let sim = Simulator::from_counts(spec.clone(), 0.0, 0.0, vec![100 - optimists, optimists], 1).unwrap();
            let vbar = pure_opinion(&sim.snapshot().character);
            let steps = character_step_probabilities(&spec, sim.snapshot()).unwrap();
            let (up, down) = p.step_probabilities(vbar);
            assert!((steps[1].p_up - up).abs() < 1e-15);
            assert!((steps[1].p_down - down).abs() < 1e-15);
            assert!((steps[0].p_up - down).abs() < 1e-15);
        }
        let (up, down) = p.step_probabilities(0.0);
        assert!((up - 0.15).abs() < 1e-15 && (down - 0.15).abs() < 1e-15);
        assert_eq!(p.step_probabilities(1.0).0, 0.0);
        for v in [0.02, 0.3, 0.86] {
            assert!((p.step_probabilities(v).0 - p.step_probabilities(-v).1).abs() < 1e-15);
        }
    }

    #[test]
    fn events_change_opinion_by_lattice_steps() {
        let spec = build_pure(&params()).unwrap();
        let traj = simulate_trajectory(&spec, 5.0, 3).unwrap();
        let mut prev = pure_opinion(&traj.initial.character);
        for e in &traj.events {
            assert!(matches!(e.kind, EventKind::Transition { .. }));
            let v = pure_opinion(&e.character_after);
            let jump = ((v - prev) * 50.0).round() as i64;
            assert!(jump.abs() <= 1);
            assert!((v - prev - jump as f64 / 50.0).abs() < 1e-12);
            prev = v;
        }
    }

    #[test]
    fn drift_is_odd() {
        let p = params();
        assert_eq!(p.limit_drift(0.0), 0.0);
        for v in [0.1, 0.5, 0.9] {
            assert!((p.limit_drift(v) + p.limit_drift(-v)).abs() < 1e-15);
        }
    }

    #[test]
    fn drift_matches_rate_difference() {
        // Net rate of upward minus downward moves, times the jump size 2/n.
        for (beta, gamma) in [(0.3f64, 0.8f64), (0.2, 1.5)] {
            for v in [-0.9f64, -0.2, 0.0, 0.4, 0.95] {
                let direct = beta * ((1.0 - v) * (gamma * v).exp() - (1.0 + v) * (-gamma * v).exp());
                assert!((pure_limit_drift(beta, gamma, v) - direct).abs() < 1e-14);
            }
        }
    }
}
