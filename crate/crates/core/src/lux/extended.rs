//! Herding model with trading noise traders and fundamentalists.
//!
//! States: 0 pessimist, 1 optimist, 2 fundamentalist. Fundamentalists never
//! change type and noise traders never become fundamentalists.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::engine::{
    AgentBehavior, DemandMoments, InitialPriceLaw, InitialStateLaw, ModelSpec, PricingRule, ScalingExponents,
    SignalLaw, StateSpace,
};
use crate::error::{Error, Result};

use super::roots::tanh_fixed_point;

pub const EXTENDED_STATES: [&str; 3] = ["-1", "+1", "fundamentalist"];

/// Fundamentalist demand weight `w2(F, x)`.
#[derive(Clone)]
pub enum FundamentalWeight {
    /// `kappa * (F - x)`.
    Linear { kappa: f64 },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for FundamentalWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FundamentalWeight::Linear { kappa } => write!(f, "Linear {{ kappa: {kappa} }}"),
            FundamentalWeight::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for FundamentalWeight {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (FundamentalWeight::Linear { kappa: a }, FundamentalWeight::Linear { kappa: b }) => a == b,
            (FundamentalWeight::Custom(a), FundamentalWeight::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl FundamentalWeight {
    pub fn linear(kappa: f64) -> Self {
        FundamentalWeight::Linear { kappa }
    }

    pub fn eval(&self, fundamental: f64, price: f64) -> f64 {
        match self {
            FundamentalWeight::Linear { kappa } => kappa * (fundamental - price),
            FundamentalWeight::Custom(f) => f(fundamental, price),
        }
    }

    /// Price `x` with `w2(F, x) = target`, when the weight is invertible.
    pub fn solve(&self, fundamental: f64, target: f64) -> Result<f64> {
        match self {
            FundamentalWeight::Linear { kappa } if *kappa != 0.0 => Ok(fundamental - target / kappa),
            _ => Err(Error::param("fundamentalist weight is not invertible in the price")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuxExtendedParams {
    pub n: usize,
    /// Number of fundamentalists.
    pub k_n: usize,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha: f64,
    pub lambda_bar: f64,
    pub w1: f64,
    pub w2: FundamentalWeight,
    pub fundamental: f64,
    pub signal_std: f64,
    pub initial_price: InitialPriceLaw,
    /// Defaults to fundamentalists fixed and noise traders i.i.d. uniform.
    pub initial_states: Option<InitialStateLaw>,
}

impl LuxExtendedParams {
    /// Parameter set shared by the reference runs: `n = 100`, 20 fundamentalists,
    /// `beta = 0.12`, `w1 = 1`, `F = 50`, signal std 0.2, start price 48.
    pub fn reference(gamma1: f64, gamma2: f64, w2: FundamentalWeight) -> Self {
        Self {
            n: 100,
            k_n: 20,
            beta: 0.12,
            gamma1,
            gamma2,
            alpha: 1.0,
            lambda_bar: 1.0,
            w1: 1.0,
            w2,
            fundamental: 50.0,
            signal_std: 0.2,
            initial_price: InitialPriceLaw::Fixed(48.0),
            initial_states: None,
        }
    }

    pub fn phi_n(&self) -> f64 {
        self.k_n as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k_n > self.n {
            return Err(Error::param(format!("fundamentalist count {} must not exceed n = {}", self.k_n, self.n)));
        }
        if (self.n - self.k_n) % 2 != 0 {
            return Err(Error::param(format!(
                "n - k_n must be even, got n = {} and k_n = {}",
                self.n, self.k_n
            )));
        }
        let positive = [
            ("beta", self.beta),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("w1", self.w1),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.fundamental.is_finite() {
            return Err(Error::param("fundamental value must be finite"));
        }
        if !(self.signal_std.is_finite() && self.signal_std >= 0.0) {
            return Err(Error::param(format!("signal_std must be nonnegative, got {}", self.signal_std)));
        }
        Ok(())
    }

    pub fn behavior(&self) -> LuxExtendedBehavior {
        LuxExtendedBehavior {
            beta: self.beta,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            lambda_bar: self.lambda_bar,
            w1: self.w1,
            w2: self.w2.clone(),
            fundamental: self.fundamental,
            phi_n: self.phi_n(),
            demand_unit: 1.0 / (self.n as f64).sqrt(),
            clamps: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn default_initial_states(&self) -> InitialStateLaw {
        InitialStateLaw::Mixed {
            fixed: vec![0, 0, self.k_n as u64],
            probabilities: vec![0.5, 0.5, 0.0],
        }
    }

    /// Counts for a deterministic start with noise-trader opinion nearest to `theta`.
    pub fn opinion_counts(&self, theta: f64) -> Result<Vec<u64>> {
        let noise = self.n - self.k_n;
        let [p, o] = super::pure::opinion_counts(noise, theta)?;
        Ok(vec![p, o, self.k_n as u64])
    }
}

/// Average opinion `(v2 - v1) / (1 - phi)` of the noise traders.
pub fn extended_opinion(character: &[f64], phi: f64) -> f64 {
    if phi >= 1.0 {
        0.0
    } else {
        (character[1] - character[0]) / (1.0 - phi)
    }
}

/// `lambda_bar * (phi * w2 + (1 - phi) * w1 * vbar)`.
pub fn expected_price_trend(lambda_bar: f64, phi: f64, w1: f64, w2_value: f64, vbar: f64) -> f64 {
    lambda_bar * (phi * w2_value + (1.0 - phi) * w1 * vbar)
}

pub struct LuxExtendedBehavior {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda_bar: f64,
    pub w1: f64,
    pub w2: FundamentalWeight,
    pub fundamental: f64,
    pub phi_n: f64,
    demand_unit: f64,
    clamps: Arc<AtomicU64>,
}

impl fmt::Debug for LuxExtendedBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LuxExtendedBehavior")
            .field("beta", &self.beta)
            .field("gamma1", &self.gamma1)
            .field("gamma2", &self.gamma2)
            .field("phi_n", &self.phi_n)
            .field("clamps", &self.clamps.load(Ordering::Relaxed))
            .finish()
    }
}

impl LuxExtendedBehavior {
    /// Expected price trend `z_hat` seen by noise traders.
    pub fn price_trend(&self, price: f64, character: &[f64]) -> f64 {
        let vbar = extended_opinion(character, self.phi_n);
        expected_price_trend(
            self.lambda_bar,
            self.phi_n,
            self.w1,
            self.w2.eval(self.fundamental, price),
            vbar,
        )
    }

    /// Unclamped switching probabilities `(P(-1 -> +1), P(+1 -> -1))`.
    pub fn raw_switch_probabilities(&self, price: f64, character: &[f64]) -> (f64, f64) {
        let vbar = extended_opinion(character, self.phi_n);
        let a = self.gamma1 * self.price_trend(price, character) + self.gamma2 * vbar;
        let e = a.exp();
        (self.beta * e, self.beta / e)
    }

    fn clamp(&self, p: f64) -> f64 {
        if (0.0..=1.0).contains(&p) {
            p
        } else {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            if p > 1.0 {
                1.0
            } else {
                0.0
            }
        }
    }

    fn deterministic_demand(&self, state: usize, price: f64) -> f64 {
        match state {
            0 => -self.demand_unit * self.w1,
            1 => self.demand_unit * self.w1,
            _ => self.demand_unit * self.w2.eval(self.fundamental, price),
        }
    }
}

impl AgentBehavior for LuxExtendedBehavior {
    fn trading_intensity(&self, _: usize, _: f64, _: &[f64]) -> f64 {
        self.lambda_bar
    }

    fn transition_rate(&self, _: usize, _: f64, _: &[f64]) -> f64 {
        1.0
    }

    fn transition_row(&self, state: usize, price: f64, character: &[f64], row: &mut [f64]) {
        row.fill(0.0);
        match state {
            0 | 1 => {
                let (p12, p21) = self.raw_switch_probabilities(price, character);
                if state == 0 {
                    let p = self.clamp(p12);
                    row[0] = 1.0 - p;
                    row[1] = p;
                } else {
                    let p = self.clamp(p21);
                    row[0] = p;
                    row[1] = 1.0 - p;
                }
            }
            _ => row[2] = 1.0,
        }
    }

    fn excess_demand(&self, state: usize, price: f64, _: &[f64], signal: f64) -> f64 {
        self.deterministic_demand(state, price) + signal
    }

    fn demand_moments(&self, state: usize, price: f64, _: &[f64], signal: &SignalLaw) -> Option<DemandMoments> {
        Some(DemandMoments::shifted(self.deterministic_demand(state, price), signal))
    }

    fn clamp_events(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }
}

/// Finite spec: `d1 = 1`, `d2 = 1/2`, pricing `x + alpha q / sqrt(n)`, unit transition
/// rates and trading intensity `lambda_bar` for every agent.
pub fn build_extended(params: &LuxExtendedParams) -> Result<ModelSpec> {
    params.validate()?;
    let initial = params
        .initial_states
        .clone()
        .unwrap_or_else(|| params.default_initial_states());
    if let InitialStateLaw::Counts(c) = &initial {
        if c.len() == 3 && c[2] != params.k_n as u64 {
            return Err(Error::param(format!(
                "initial counts hold {} fundamentalists, expected k_n = {}",
                c[2], params.k_n
            )));
        }
    }
    ModelSpec::homogeneous(
        StateSpace::new(EXTENDED_STATES)?,
        params.n,
        ScalingExponents::new(1.0, 0.5)?,
        Arc::new(params.behavior()),
        PricingRule::affine(params.alpha)?,
        SignalLaw::centered_normal(params.signal_std)?,
    )?
    .with_initial_price(params.initial_price)
    .with_initial_states(initial)
}

/// Rest point of the noise-free large-market dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub vbar: f64,
    pub price: f64,
}

/// Residuals of the two rest-point equations at `(vbar, price)`:
/// `phi w2(F, x) + (1 - phi) w1 vbar` and `[tanh(gamma2 vbar) - vbar] cosh(gamma2 vbar)`.
pub fn equilibrium_residuals(
    phi: f64,
    w1: f64,
    w2: &FundamentalWeight,
    fundamental: f64,
    gamma2: f64,
    eq: Equilibrium,
) -> (f64, f64) {
    let r1 = phi * w2.eval(fundamental, eq.price) + (1.0 - phi) * w1 * eq.vbar;
    let a = gamma2 * eq.vbar;
    let r2 = (a.tanh() - eq.vbar) * a.cosh();
    (r1, r2)
}

/// Rest points: `(0, F)` and, for `gamma2 > 1`, the symmetric pair built from the
/// positive root of `y = tanh(gamma2 y)`. Ordered as `E0`, `E+`, `E-`.
pub fn equilibria(phi: f64, w1: f64, w2: &FundamentalWeight, fundamental: f64, gamma2: f64) -> Result<Vec<Equilibrium>> {
    if !(0.0..=1.0).contains(&phi) || phi == 0.0 {
        return Err(Error::param(format!("fundamentalist share must lie in (0, 1], got {phi}")));
    }
    let price_for = |vbar: f64| -> Result<f64> { w2.solve(fundamental, -(1.0 - phi) * w1 * vbar / phi) };
    let mut out = vec![Equilibrium {
        vbar: 0.0,
        price: price_for(0.0)?,
    }];
    let v = tanh_fixed_point(gamma2);
    if v > 0.0 {
        out.push(Equilibrium { vbar: v, price: price_for(v)? });
        out.push(Equilibrium {
            vbar: -v,
            price: price_for(-v)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate_trajectory, EventKind, Simulator};

    fn reference() -> LuxExtendedParams {
        LuxExtendedParams::reference(0.2, 1.2, FundamentalWeight::linear(1.0))
    }

    #[test]
    fn neutral_market() {
        let b = reference().behavior();
        let character = [0.4, 0.4, 0.2];
        assert_eq!(b.price_trend(50.0, &character), 0.0);
        assert_eq!(b.raw_switch_probabilities(50.0, &character), (0.12, 0.12));
    }

    #[test]
    fn price_trend_below_fundamental() {
        let b = reference().behavior();
        assert!((b.price_trend(48.0, &[0.4, 0.4, 0.2]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn optimist_demand_and_price_step() {
        let b = reference().behavior();
        let q = b.excess_demand(1, 48.0, &[0.4, 0.4, 0.2], 0.0);
        assert!((q - 0.1).abs() < 1e-15);
        let spec = build_extended(&reference()).unwrap();
        let p = spec.pricing().apply(q, 48.0, 100, spec.scaling());
        assert!((p - (48.0 + 0.1 / 10.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_odd_noise_population() {
        let mut p = reference();
        p.k_n = 21;
        assert!(build_extended(&p).is_err());
    }

    #[test]
    fn fundamentalist_row_is_identity() {
        let b = reference().behavior();
        let mut row = [0.0; 3];
        b.transition_row(2, 10.0, &[0.1, 0.7, 0.2], &mut row);
        assert_eq!(row, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn fundamentalists_are_conserved() {
        let spec = build_extended(&reference()).unwrap();
        let traj = simulate_trajectory(&spec, 50.0, 4).unwrap();
        assert!(traj.events.iter().any(|e| matches!(e.kind, EventKind::Trade { .. })));
        for e in &traj.events {
            assert!((e.character_after[2] - 0.2).abs() < 1e-15);
            if let EventKind::Transition { from, to } = e.kind {
                assert!(from == 2 && to == 2 || from < 2 && to < 2);
            }
        }
    }

    #[test]
    fn opinion_from_character() {
        let p = reference();
        let spec = build_extended(&p).unwrap();
        let sim = Simulator::from_counts(spec, 0.0, 50.0, vec![30, 50, 20], 1).unwrap();
        let c = &sim.snapshot().character;
        let vbar = extended_opinion(c, p.phi_n());
        assert!((vbar - 0.25).abs() < 1e-12);
        assert!((c[0] - (1.0 - 0.2) * (1.0 - vbar) / 2.0).abs() < 1e-12);
        assert!((c[1] - (1.0 - 0.2) * (1.0 + vbar) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn clamping_counts_events() {
        let mut p = reference();
        p.gamma2 = 30.0;
        let b = p.behavior();
        let mut row = [0.0; 3];
        b.transition_row(0, 50.0, &[0.0, 0.8, 0.2], &mut row);
        assert_eq!(row, [0.0, 1.0, 0.0]);
        assert_eq!(b.clamp_events(), 1);
    }

    #[test]
    fn equilibria_for_low_and_high_herding() {
        let w2 = FundamentalWeight::linear(1.0);
        let e = equilibria(0.2, 1.0, &w2, 50.0, 0.8).unwrap();
        assert_eq!(e, vec![Equilibrium { vbar: 0.0, price: 50.0 }]);
        let e = equilibria(0.2, 1.0, &w2, 50.0, 1.2).unwrap();
        assert_eq!(e.len(), 3);
        let v = tanh_fixed_point(1.2);
        assert!((e[1].price - (50.0 + 4.0 * v)).abs() < 1e-12);
        assert!((e[2].price - (50.0 - 4.0 * v)).abs() < 1e-12);
        assert!(((50.0 - e[2].price) - (e[1].price - 50.0)).abs() < 1e-12);
        let custom = FundamentalWeight::Custom(Arc::new(|f, x| (f - x).powi(3)));
        assert!(equilibria(0.2, 1.0, &custom, 50.0, 1.2).is_err());
    }
}
