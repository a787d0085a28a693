//! Drift and volume coefficients of the finite market and their large-market limits.
//!
//! Coefficients are functions of a price `x` and a character vector `v`:
//! `z` (expected aggregate excess demand), `b` (expected aggregate state
//! transition), `sigma` (trading volume) and `c2`, the matrix of second moments
//! of the character increments. Off-diagonal entries of `c2` are signed.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;

use crate::engine::{
    DemandMoments, ModelSpec, MomentSource, Population, Simulator, SignalLaw,
};
use crate::error::{Error, Result};
use crate::lux::{extended_opinion, pure_opinion, FundamentalWeight, LuxExtendedParams, LuxPureParams};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketSize {
    Finite(usize),
    Infinite,
}

/// Evaluators of the four coefficient functions.
pub trait CoefficientFunctions: Send + Sync {
    fn dimension(&self) -> usize;
    fn z(&self, x: f64, v: &[f64]) -> Result<f64>;
    fn b(&self, x: f64, v: &[f64]) -> Result<Vec<f64>>;
    fn sigma(&self, x: f64, v: &[f64]) -> Result<f64>;
    /// Row-major `m x m` second-moment matrix.
    fn c2(&self, x: f64, v: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub n: MarketSize,
    inner: Arc<dyn CoefficientFunctions>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("n", &self.n)
            .field("dimension", &self.inner.dimension())
            .finish()
    }
}

impl CoefficientSet {
    pub fn new(n: MarketSize, inner: Arc<dyn CoefficientFunctions>) -> Self {
        Self { n, inner }
    }

    pub fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    pub fn z(&self, x: f64, v: &[f64]) -> Result<f64> {
        self.inner.z(x, v)
    }

    pub fn b(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.b(x, v)
    }

    pub fn sigma(&self, x: f64, v: &[f64]) -> Result<f64> {
        self.inner.sigma(x, v)
    }

    pub fn c2(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.c2(x, v)
    }

    /// `sqrt` of the diagonal of `c2`.
    pub fn c_diagonal(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        let m = self.dimension();
        let c2 = self.c2(x, v)?;
        Ok((0..m).map(|i| c2[i * m + i].max(0.0).sqrt()).collect())
    }
}

/// Coefficients of a finite homogeneous market, computed from its behaviour.
struct FiniteCoefficients {
    spec: ModelSpec,
}

impl FiniteCoefficients {
    fn behavior(&self) -> &dyn crate::engine::AgentBehavior {
        match self.spec.population() {
            Population::Homogeneous(b) => b.as_ref(),
            Population::Heterogeneous(_) => unreachable!("checked at construction"),
        }
    }

    /// Agents per state implied by `v`, possibly fractional.
    fn occupancy(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = self.spec.m();
        if v.len() != m {
            return Err(Error::input(format!("character must have {m} entries")));
        }
        let scale = 1.0 / self.spec.scaling().character_unit(self.spec.n());
        Ok(v.iter().map(|x| x * scale).collect())
    }

    fn moments(&self, state: usize, x: f64, v: &[f64]) -> Result<DemandMoments> {
        let b = self.behavior();
        let signal = self.spec.signals();
        if let Some(mo) = b.demand_moments(state, x, v, signal) {
            return Ok(mo);
        }
        match self.spec.moment_source() {
            MomentSource::ClosedForm => Err(Error::MomentsUnavailable(format!(
                "no closed-form demand moments for state {state}"
            ))),
            MomentSource::MonteCarlo { samples, seed } => Ok(monte_carlo_moments(samples, seed, state, signal, |xi| {
                b.excess_demand(state, x, v, xi)
            })),
        }
    }
}

/// Sample moments of `demand(xi)` over `samples` seeded signal draws.
fn monte_carlo_moments<F: Fn(f64) -> f64>(
    samples: usize,
    seed: u64,
    state: usize,
    signal: &SignalLaw,
    demand: F,
) -> DemandMoments {
    let mut rng = SimRng::seed_from_u64(seed.wrapping_add(state as u64));
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples.max(1) {
        let e = demand(signal.sample(&mut rng));
        s1 += e;
        s2 += e * e;
    }
    let k = samples.max(1) as f64;
    DemandMoments {
        mean: s1 / k,
        second: s2 / k,
    }
}

impl CoefficientFunctions for FiniteCoefficients {
    fn dimension(&self) -> usize {
        self.spec.m()
    }

    fn z(&self, x: f64, v: &[f64]) -> Result<f64> {
        let occ = self.occupancy(v)?;
        let b = self.behavior();
        let mut total = 0.0;
        for (i, &c) in occ.iter().enumerate() {
            let lambda = b.trading_intensity(i, x, v);
            if c != 0.0 && lambda != 0.0 {
                total += c * lambda * self.moments(i, x, v)?.mean;
            }
        }
        Ok(self.spec.scaling().demand_unit(self.spec.n()) * total)
    }

    fn sigma(&self, x: f64, v: &[f64]) -> Result<f64> {
        let occ = self.occupancy(v)?;
        let b = self.behavior();
        let mut total = 0.0;
        for (i, &c) in occ.iter().enumerate() {
            let lambda = b.trading_intensity(i, x, v);
            if c != 0.0 && lambda != 0.0 {
                total += c * lambda * self.moments(i, x, v)?.second;
            }
        }
        let unit = self.spec.scaling().demand_unit(self.spec.n());
        Ok((unit * unit * total).max(0.0).sqrt())
    }

    fn b(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        let flows = self.flows(x, v)?;
        let m = self.spec.m();
        Ok((0..m)
            .map(|i| {
                let inflow: f64 = (0..m).filter(|&j| j != i).map(|j| flows[j * m + i]).sum();
                let outflow: f64 = (0..m).filter(|&j| j != i).map(|j| flows[i * m + j]).sum();
                inflow - outflow
            })
            .collect())
    }

    fn c2(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        let flows = self.flows(x, v)?;
        let m = self.spec.m();
        let unit = self.spec.scaling().character_unit(self.spec.n());
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = if i == j {
                    (0..m)
                        .filter(|&k| k != i)
                        .map(|k| flows[k * m + i] + flows[i * m + k])
                        .sum::<f64>()
                } else {
                    -(flows[i * m + j] + flows[j * m + i])
                } * unit;
            }
        }
        Ok(out)
    }
}

impl FiniteCoefficients {
    /// Rate of moves `i -> j` in character units: `v_i * mu_i * P^{ij}`.
    fn flows(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.spec.m())?;
        let m = self.spec.m();
        let b = self.behavior();
        let mut row = vec![0.0; m];
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            if v[i] == 0.0 {
                continue;
            }
            let rate = v[i] * b.transition_rate(i, x, v);
            b.transition_row(i, x, v, &mut row);
            for j in 0..m {
                out[i * m + j] = rate * row[j];
            }
        }
        Ok(out)
    }
}

/// Finite-market coefficients of a homogeneous spec.
///
/// Demand moments come from the behaviour when available; otherwise the spec's
/// moment source decides between failing and Monte Carlo estimation.
pub fn finite_coefficients(spec: &ModelSpec) -> Result<CoefficientSet> {
    if !spec.is_homogeneous() {
        return Err(Error::MomentsUnavailable(
            "coefficients are defined on the character, which does not determine a heterogeneous market".into(),
        ));
    }
    Ok(CoefficientSet::new(
        MarketSize::Finite(spec.n()),
        Arc::new(FiniteCoefficients { spec: spec.clone() }),
    ))
}

/// Parameters of a shipped limit model.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitModel {
    Pure { beta: f64, gamma: f64 },
    Extended(ExtendedLimit),
}

/// Large-market parameters of the extended model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedLimit {
    pub phi: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha: f64,
    pub lambda_bar: f64,
    pub w1: f64,
    pub w2: FundamentalWeight,
    pub fundamental: f64,
    pub signal_variance: f64,
}

impl ExtendedLimit {
    pub fn from_params(p: &LuxExtendedParams) -> Self {
        Self {
            phi: p.phi_n(),
            beta: p.beta,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
            alpha: p.alpha,
            lambda_bar: p.lambda_bar,
            w1: p.w1,
            w2: p.w2.clone(),
            fundamental: p.fundamental,
            signal_variance: p.signal_std * p.signal_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phi) {
            return Err(Error::param(format!("phi must lie in [0, 1), got {}", self.phi)));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("w1", self.w1),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.signal_variance.is_finite() && self.signal_variance >= 0.0) {
            return Err(Error::param("signal variance must be nonnegative"));
        }
        Ok(())
    }

    /// `lambda_bar [phi w2(F, x) + (1 - phi) w1 vbar]`.
    pub fn z(&self, x: f64, vbar: f64) -> f64 {
        crate::lux::expected_price_trend(
            self.lambda_bar,
            self.phi,
            self.w1,
            self.w2.eval(self.fundamental, x),
            vbar,
        )
    }

    /// Herding argument `gamma1 z + gamma2 vbar`.
    fn herding(&self, x: f64, vbar: f64) -> f64 {
        self.gamma1 * self.z(x, vbar) + self.gamma2 * vbar
    }

    /// Price drift `alpha z`.
    pub fn price_drift(&self, x: f64, vbar: f64) -> f64 {
        self.alpha * self.z(x, vbar)
    }

    /// Price diffusion `alpha sqrt(lambda_bar Var)`.
    pub fn price_diffusion(&self) -> f64 {
        self.alpha * (self.lambda_bar * self.signal_variance).sqrt()
    }

    /// Opinion drift `2 beta [tanh(a) - vbar] cosh(a)` with `a = gamma1 z + gamma2 vbar`.
    pub fn opinion_drift(&self, x: f64, vbar: f64) -> f64 {
        let a = self.herding(x, vbar);
        2.0 * self.beta * (a.tanh() - vbar) * a.cosh()
    }
}

struct PureLimit {
    beta: f64,
    gamma: f64,
}

impl CoefficientFunctions for PureLimit {
    fn dimension(&self) -> usize {
        2
    }

    fn z(&self, _: f64, _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    /// `v1 beta e^(gamma vbar) - v2 beta e^(-gamma vbar)`, which equals
    /// `beta [tanh(gamma vbar) - vbar] cosh(gamma vbar)` on the simplex.
    fn b(&self, _: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, 2)?;
        let e = (self.gamma * pure_opinion(v)).exp();
        let b2 = v[0] * (self.beta * e) - v[1] * (self.beta / e);
        Ok(vec![-b2, b2])
    }

    fn sigma(&self, _: f64, _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn c2(&self, _: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, 2)?;
        Ok(vec![0.0; 4])
    }
}

struct ExtendedLimitCoefficients(ExtendedLimit);

impl CoefficientFunctions for ExtendedLimitCoefficients {
    fn dimension(&self) -> usize {
        3
    }

    fn z(&self, x: f64, v: &[f64]) -> Result<f64> {
        check_len(v, 3)?;
        Ok(self.0.z(x, extended_opinion(v, self.0.phi)))
    }

    fn b(&self, x: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, 3)?;
        let vbar = extended_opinion(v, self.0.phi);
        let b2 = 0.5 * (1.0 - self.0.phi) * self.0.opinion_drift(x, vbar);
        Ok(vec![-b2, b2, 0.0])
    }

    fn sigma(&self, _: f64, _: &[f64]) -> Result<f64> {
        Ok((self.0.lambda_bar * self.0.signal_variance).sqrt())
    }

    fn c2(&self, _: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, 3)?;
        Ok(vec![0.0; 9])
    }
}

fn check_len(v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::input(format!("character must have {m} entries, got {}", v.len())));
    }
    Ok(())
}

/// Analytic large-market coefficients of a shipped model.
pub fn limit_coefficients(model: &LimitModel) -> Result<CoefficientSet> {
    let inner: Arc<dyn CoefficientFunctions> = match model {
        LimitModel::Pure { beta, gamma } => {
            if !(*beta > 0.0 && *gamma > 0.0 && beta.is_finite() && gamma.is_finite()) {
                return Err(Error::param("beta and gamma must be positive"));
            }
            Arc::new(PureLimit {
                beta: *beta,
                gamma: *gamma,
            })
        }
        LimitModel::Extended(p) => {
            p.validate()?;
            Arc::new(ExtendedLimitCoefficients(p.clone()))
        }
    };
    Ok(CoefficientSet::new(MarketSize::Infinite, inner))
}

impl LimitModel {
    pub fn pure(p: &LuxPureParams) -> Self {
        LimitModel::Pure {
            beta: p.beta,
            gamma: p.gamma,
        }
    }
}

/// Largest coefficient gaps over the grid for one market size.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGap {
    pub n: usize,
    pub z: f64,
    pub b: f64,
    pub sigma: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub gaps: Vec<CoefficientGap>,
    /// Coefficients whose gap grows somewhere along increasing `n`.
    pub non_monotone: Vec<&'static str>,
    /// Coefficients whose gap does not at least halve between the first and last `n`.
    pub non_vanishing: Vec<&'static str>,
}

/// Compares finite coefficients along `ns` with `limit` on `grid`.
pub fn coefficient_convergence_check<F>(
    family: F,
    limit: &CoefficientSet,
    grid: &[(f64, Vec<f64>)],
    ns: &[usize],
) -> Result<ConvergenceReport>
where
    F: Fn(usize) -> Result<CoefficientSet>,
{
    let max_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut gaps = Vec::with_capacity(ns.len());
    for &n in ns {
        let finite = family(n)?;
        let mut g = CoefficientGap {
            n,
            z: 0.0,
            b: 0.0,
            sigma: 0.0,
            c2: 0.0,
        };
        for (x, v) in grid {
            g.z = g.z.max((finite.z(*x, v)? - limit.z(*x, v)?).abs());
            g.sigma = g.sigma.max((finite.sigma(*x, v)? - limit.sigma(*x, v)?).abs());
            g.b = g.b.max(max_abs(&finite.b(*x, v)?, &limit.b(*x, v)?));
            g.c2 = g.c2.max(max_abs(&finite.c2(*x, v)?, &limit.c2(*x, v)?));
        }
        gaps.push(g);
    }
    let series: [(&'static str, fn(&CoefficientGap) -> f64); 4] =
        [("z", |g| g.z), ("b", |g| g.b), ("sigma", |g| g.sigma), ("c2", |g| g.c2)];
    let mut non_monotone = Vec::new();
    let mut non_vanishing = Vec::new();
    for (name, get) in series {
        let vals: Vec<f64> = gaps.iter().map(get).collect();
        if vals.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-15) {
            non_monotone.push(name);
        }
        if let (Some(first), Some(last)) = (vals.first(), vals.last()) {
            if vals.len() > 1 && *last > 1e-12 && *last > 0.5 * first {
                non_vanishing.push(name);
            }
        }
    }
    Ok(ConvergenceReport {
        gaps,
        non_monotone,
        non_vanishing,
    })
}

/// Monte Carlo estimate of `nu * E[f]` over single events, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MomentEstimate {
    /// Distance from `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub nu: f64,
    pub replications: usize,
    /// `nu E[dP]`.
    pub price_first: MomentEstimate,
    /// `nu E[dP^2]`.
    pub price_second: MomentEstimate,
    /// `nu E[dM^i]`.
    pub character_first: Vec<MomentEstimate>,
    /// `nu E[dM^i dM^j]`, row-major.
    pub character_second: Vec<MomentEstimate>,
    /// `nu E[f(dP, dM)]` for each custom observable.
    pub custom: Vec<MomentEstimate>,
}

pub type KernelObservable<'a> = &'a dyn Fn(f64, &[f64]) -> f64;

#[derive(Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn estimate(&self, k: usize, nu: f64) -> MomentEstimate {
        let k = k as f64;
        let mean = self.sum / k;
        let var = (self.sum_sq / k - mean * mean).max(0.0) * k / (k - 1.0).max(1.0);
        MomentEstimate {
            mean: nu * mean,
            std_error: nu * (var / k).sqrt(),
        }
    }
}

/// Runs `replications` independent single events from `(price, counts)`.
pub fn monte_carlo_kernel(
    spec: &ModelSpec,
    price: f64,
    counts: &[u64],
    replications: usize,
    seed: u64,
    custom: &[KernelObservable<'_>],
) -> Result<KernelReport> {
    if replications < 2 {
        return Err(Error::input("need at least two replications"));
    }
    let m = spec.m();
    let mut sim = Simulator::from_counts(spec.clone().with_event_cap(u64::MAX), 0.0, price, counts.to_vec(), seed)?;
    let probs = crate::engine::action_probabilities(spec, sim.snapshot())?;
    let start = sim.snapshot().character.clone();
    let mut dp = Accumulator::default();
    let mut dp2 = Accumulator::default();
    let mut dm = vec![Accumulator::default(); m];
    let mut dmm = vec![Accumulator::default(); m * m];
    let mut cu = vec![Accumulator::default(); custom.len()];
    let mut delta = vec![0.0; m];
    for _ in 0..replications {
        sim.reset(0.0, price, counts)?;
        sim.step(f64::INFINITY)?;
        let s = sim.snapshot();
        let d_price = s.price - price;
        for i in 0..m {
            delta[i] = s.character[i] - start[i];
        }
        dp.push(d_price);
        dp2.push(d_price * d_price);
        for i in 0..m {
            dm[i].push(delta[i]);
            for j in 0..m {
                dmm[i * m + j].push(delta[i] * delta[j]);
            }
        }
        for (acc, f) in cu.iter_mut().zip(custom) {
            acc.push(f(d_price, &delta));
        }
    }
    let nu = probs.nu;
    Ok(KernelReport {
        nu,
        replications,
        price_first: dp.estimate(replications, nu),
        price_second: dp2.estimate(replications, nu),
        character_first: dm.iter().map(|a| a.estimate(replications, nu)).collect(),
        character_second: dmm.iter().map(|a| a.estimate(replications, nu)).collect(),
        custom: cu.iter().map(|a| a.estimate(replications, nu)).collect(),
    })
}
