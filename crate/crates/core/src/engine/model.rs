//! Static description of a finite market: states, agents, pricing and signals.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::SimRng;

/// Default cap on the number of events in one trajectory.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Tolerance on transition matrix row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Finite set of agent states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::param("state space needs at least one state"));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::param(format!("duplicate state label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Scaling exponents of the market character (`d1`) and of demand and price (`d2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingExponents {
    d1: f64,
    d2: f64,
}

impl ScalingExponents {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1.is_finite() && d1 >= 0.5) {
            return Err(Error::param(format!("d1 must be a finite value >= 1/2, got {d1}")));
        }
        if !(d2.is_finite() && d2 >= 0.5) {
            return Err(Error::param(format!("d2 must be a finite value >= 1/2, got {d2}")));
        }
        Ok(Self { d1, d2 })
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn d2(&self) -> f64 {
        self.d2
    }

    /// `n^(-d1)`, the weight of a single agent in the market character.
    pub fn character_unit(&self, n: usize) -> f64 {
        negative_power(n, self.d1)
    }

    /// `n^(-d2)`, the demand scaling of the pricing rule.
    pub fn demand_unit(&self, n: usize) -> f64 {
        negative_power(n, self.d2)
    }
}

/// `n^(-d)` with the common exponents evaluated without `powf` rounding.
pub(crate) fn negative_power(n: usize, d: f64) -> f64 {
    let n = n as f64;
    if d == 1.0 {
        1.0 / n
    } else if d == 0.5 {
        1.0 / n.sqrt()
    } else {
        n.powf(-d)
    }
}

/// First and second moment of an excess demand under the signal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandMoments {
    pub mean: f64,
    pub second: f64,
}

impl DemandMoments {
    /// Moments of `deterministic + xi` for a signal with the given mean and variance.
    pub fn shifted(deterministic: f64, signal: &SignalLaw) -> Self {
        let mean = deterministic + signal.mean();
        Self {
            mean,
            second: mean * mean + signal.variance(),
        }
    }
}

/// Behaviour functions of an agent, evaluated for an agent currently in `state`.
///
/// In homogeneous mode a single behaviour is shared by all agents, so agents in
/// the same state behave identically. In heterogeneous mode every agent owns one.
pub trait AgentBehavior: Send + Sync {
    /// Trading intensity λ. Must be finite and nonnegative.
    fn trading_intensity(&self, state: usize, price: f64, character: &[f64]) -> f64;

    /// State transition rate μ. Must be finite and nonnegative.
    fn transition_rate(&self, state: usize, price: f64, character: &[f64]) -> f64;

    /// Row `state` of the transition matrix, written into `row` (length m).
    fn transition_row(&self, state: usize, price: f64, character: &[f64], row: &mut [f64]);

    /// Excess demand submitted when trading with signal `signal`.
    fn excess_demand(&self, state: usize, price: f64, character: &[f64], signal: f64) -> f64;

    /// Closed-form demand moments under `signal`, if known.
    fn demand_moments(
        &self,
        _state: usize,
        _price: f64,
        _character: &[f64],
        _signal: &SignalLaw,
    ) -> Option<DemandMoments> {
        None
    }

    /// Number of times a transition probability had to be clamped into [0, 1].
    fn clamp_events(&self) -> u64 {
        0
    }

    /// Full transition matrix, row-major `m x m`.
    fn transition_matrix(&self, m: usize, price: f64, character: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            self.transition_row(i, price, character, &mut out[i * m..(i + 1) * m]);
        }
        out
    }
}

/// State-dependent but otherwise constant behaviour.
///
/// Useful for generic specs; demand is `demand[state] + xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantBehavior {
    pub trading_intensity: Vec<f64>,
    pub transition_rate: Vec<f64>,
    /// Row-major `m x m` row-stochastic matrix.
    pub transition_matrix: Vec<f64>,
    pub demand: Vec<f64>,
}

impl ConstantBehavior {
    pub fn new(
        trading_intensity: Vec<f64>,
        transition_rate: Vec<f64>,
        transition_matrix: Vec<f64>,
        demand: Vec<f64>,
    ) -> Result<Self> {
        let m = trading_intensity.len();
        if m == 0 || transition_rate.len() != m || demand.len() != m || transition_matrix.len() != m * m {
            return Err(Error::param("constant behaviour: inconsistent dimensions"));
        }
        for (name, v) in [("trading intensity", &trading_intensity), ("transition rate", &transition_rate)] {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::param(format!("{name} must be finite and nonnegative")));
            }
        }
        if demand.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("demand must be finite"));
        }
        for i in 0..m {
            check_row(&transition_matrix[i * m..(i + 1) * m])
                .map_err(|e| Error::param(format!("transition matrix row {i}: {e}")))?;
        }
        Ok(Self {
            trading_intensity,
            transition_rate,
            transition_matrix,
            demand,
        })
    }
}

impl AgentBehavior for ConstantBehavior {
    fn trading_intensity(&self, state: usize, _: f64, _: &[f64]) -> f64 {
        self.trading_intensity[state]
    }

    fn transition_rate(&self, state: usize, _: f64, _: &[f64]) -> f64 {
        self.transition_rate[state]
    }

    fn transition_row(&self, state: usize, _: f64, _: &[f64], row: &mut [f64]) {
        let m = row.len();
        row.copy_from_slice(&self.transition_matrix[state * m..(state + 1) * m]);
    }

    fn excess_demand(&self, state: usize, _: f64, _: &[f64], signal: f64) -> f64 {
        self.demand[state] + signal
    }

    fn demand_moments(&self, state: usize, _: f64, _: &[f64], signal: &SignalLaw) -> Option<DemandMoments> {
        Some(DemandMoments::shifted(self.demand[state], signal))
    }
}

/// Checks that a transition row is a probability vector.
pub fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(format!("entries must lie in [0, 1]: {row:?}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

/// Which agents share which behaviour.
#[derive(Clone)]
pub enum Population {
    /// All agents share one behaviour; only per-state counts are tracked.
    Homogeneous(Arc<dyn AgentBehavior>),
    /// One behaviour per agent; per-agent states are tracked.
    Heterogeneous(Vec<Arc<dyn AgentBehavior>>),
}

impl fmt::Debug for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Population::Homogeneous(_) => f.write_str("Homogeneous(..)"),
            Population::Heterogeneous(v) => write!(f, "Heterogeneous({} agents)", v.len()),
        }
    }
}

pub type Perturbation = Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;

/// Near-affine pricing rule `r_n(q, x) = x + alpha * n^(-d2) * q + u_n(q, x)`.
#[derive(Clone)]
pub struct PricingRule {
    alpha: f64,
    perturbation: Option<Perturbation>,
}

impl fmt::Debug for PricingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PricingRule")
            .field("alpha", &self.alpha)
            .field("perturbation", &self.perturbation.is_some())
            .finish()
    }
}

impl PricingRule {
    pub fn affine(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::param(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, perturbation: None })
    }

    /// Adds a perturbation `u_n(q, x)`; its decay in `n` is the caller's responsibility.
    pub fn with_perturbation(mut self, u: Perturbation) -> Self {
        self.perturbation = Some(u);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn has_perturbation(&self) -> bool {
        self.perturbation.is_some()
    }

    /// New price for demand `demand` at old price `price`.
    pub fn apply(&self, demand: f64, price: f64, n: usize, scaling: &ScalingExponents) -> f64 {
        let mut next = price + self.alpha * scaling.demand_unit(n) * demand;
        if let Some(u) = &self.perturbation {
            next += u(demand, price, n);
        }
        next
    }
}

/// Law of the i.i.d. signals entering excess demands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalLaw {
    Constant(f64),
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl SignalLaw {
    pub fn centered_normal(std: f64) -> Result<Self> {
        let law = SignalLaw::Normal { mean: 0.0, std };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SignalLaw::Constant(c) if !c.is_finite() => Err(Error::param("signal constant must be finite")),
            SignalLaw::Normal { mean, std } if !(mean.is_finite() && std.is_finite() && std >= 0.0) => {
                Err(Error::param(format!("invalid normal signal N({mean}, {std}^2)")))
            }
            SignalLaw::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                Err(Error::param(format!("invalid uniform signal on [{low}, {high}]")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SignalLaw::Constant(c) => c,
            SignalLaw::Normal { mean, .. } => mean,
            SignalLaw::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            SignalLaw::Constant(_) => 0.0,
            SignalLaw::Normal { std, .. } => std * std,
            SignalLaw::Uniform { low, high } => (high - low) * (high - low) / 12.0,
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            SignalLaw::Constant(c) => c,
            SignalLaw::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            SignalLaw::Uniform { low, high } => rng.random_range(low..high),
        }
    }
}

/// Law of the initial price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPriceLaw {
    Fixed(f64),
    Normal { mean: f64, std: f64 },
}

impl InitialPriceLaw {
    pub fn sample(&self, rng: &mut SimRng) -> Result<f64> {
        match *self {
            InitialPriceLaw::Fixed(p) => Ok(p),
            InitialPriceLaw::Normal { mean, std } => {
                let d = Normal::new(mean, std).map_err(|e| Error::param(format!("initial price law: {e}")))?;
                Ok(d.sample(rng))
            }
        }
    }
}

/// Law of the initial agent states.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateLaw {
    /// Deterministic per-state counts; agents are assigned in state order.
    Counts(Vec<u64>),
    /// Every agent draws its state independently from the given probabilities.
    Iid(Vec<f64>),
    /// Fixed counts for some agents, the remaining agents drawn i.i.d.
    Mixed { fixed: Vec<u64>, probabilities: Vec<f64> },
}

impl InitialStateLaw {
    pub fn uniform(m: usize) -> Self {
        InitialStateLaw::Iid(vec![1.0 / m as f64; m])
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        let check_probs = |p: &[f64]| -> Result<()> {
            if p.len() != m {
                return Err(Error::param(format!("initial state probabilities need {m} entries")));
            }
            if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::param("initial state probabilities must be nonnegative"));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("initial state probabilities sum to {s}")));
            }
            Ok(())
        };
        match self {
            InitialStateLaw::Counts(c) => {
                if c.len() != m || c.iter().sum::<u64>() != n as u64 {
                    return Err(Error::param(format!("initial counts {c:?} must have {m} entries summing to {n}")));
                }
            }
            InitialStateLaw::Iid(p) => check_probs(p)?,
            InitialStateLaw::Mixed { fixed, probabilities } => {
                if fixed.len() != m || fixed.iter().sum::<u64>() > n as u64 {
                    return Err(Error::param("fixed initial counts exceed the agent count"));
                }
                check_probs(probabilities)?;
            }
        }
        Ok(())
    }

    /// Draws the state of every agent.
    pub fn sample_agents(&self, n: usize, m: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        self.validate(n, m)?;
        let mut out = Vec::with_capacity(n);
        let push_fixed = |out: &mut Vec<usize>, counts: &[u64]| {
            for (i, &c) in counts.iter().enumerate() {
                out.extend(std::iter::repeat_n(i, c as usize));
            }
        };
        match self {
            InitialStateLaw::Counts(c) => push_fixed(&mut out, c),
            InitialStateLaw::Iid(p) => {
                for _ in 0..n {
                    out.push(sample_categorical(p, rng));
                }
            }
            InitialStateLaw::Mixed { fixed, probabilities } => {
                push_fixed(&mut out, fixed);
                while out.len() < n {
                    out.push(sample_categorical(probabilities, rng));
                }
            }
        }
        Ok(out)
    }

    pub fn sample_counts(&self, n: usize, m: usize, rng: &mut SimRng) -> Result<Vec<u64>> {
        if let InitialStateLaw::Counts(c) = self {
            self.validate(n, m)?;
            return Ok(c.clone());
        }
        let agents = self.sample_agents(n, m, rng)?;
        let mut counts = vec![0u64; m];
        for s in agents {
            counts[s] += 1;
        }
        Ok(counts)
    }
}

/// Index drawn proportionally to nonnegative `weights`.
///
/// Falls back to the last index with positive weight when rounding leaves the
/// uniform draw past the cumulative sum.
pub(crate) fn sample_categorical(weights: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    pick_cumulative(weights, u)
}

pub(crate) fn pick_cumulative(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// How coefficient evaluation obtains demand moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentSource {
    /// Only closed-form moments supplied by the behaviour are accepted.
    ClosedForm,
    /// Fall back to Monte Carlo estimates with the given sample count and seed.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Full description of a finite market.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    states: StateSpace,
    n: usize,
    scaling: ScalingExponents,
    population: Population,
    pricing: PricingRule,
    signals: SignalLaw,
    initial_price: InitialPriceLaw,
    initial_states: InitialStateLaw,
    moments: MomentSource,
    event_cap: u64,
}

impl ModelSpec {
    /// Homogeneous spec with i.i.d. uniform initial states and initial price 0.
    pub fn homogeneous(
        states: StateSpace,
        n: usize,
        scaling: ScalingExponents,
        behavior: Arc<dyn AgentBehavior>,
        pricing: PricingRule,
        signals: SignalLaw,
    ) -> Result<Self> {
        Self::build(states, n, scaling, Population::Homogeneous(behavior), pricing, signals)
    }

    pub fn heterogeneous(
        states: StateSpace,
        scaling: ScalingExponents,
        behaviors: Vec<Arc<dyn AgentBehavior>>,
        pricing: PricingRule,
        signals: SignalLaw,
    ) -> Result<Self> {
        let n = behaviors.len();
        Self::build(states, n, scaling, Population::Heterogeneous(behaviors), pricing, signals)
    }

    fn build(
        states: StateSpace,
        n: usize,
        scaling: ScalingExponents,
        population: Population,
        pricing: PricingRule,
        signals: SignalLaw,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("a market needs at least one agent"));
        }
        signals.validate()?;
        let m = states.len();
        Ok(Self {
            states,
            n,
            scaling,
            population,
            pricing,
            signals,
            initial_price: InitialPriceLaw::Fixed(0.0),
            initial_states: InitialStateLaw::uniform(m),
            moments: MomentSource::ClosedForm,
            event_cap: DEFAULT_EVENT_CAP,
        })
    }

    pub fn with_initial_price(mut self, law: InitialPriceLaw) -> Self {
        self.initial_price = law;
        self
    }

    pub fn with_initial_states(mut self, law: InitialStateLaw) -> Result<Self> {
        law.validate(self.n, self.states.len())?;
        self.initial_states = law;
        Ok(self)
    }

    pub fn with_moment_source(mut self, source: MomentSource) -> Self {
        self.moments = source;
        self
    }

    pub fn with_event_cap(mut self, cap: u64) -> Self {
        self.event_cap = cap;
        self
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn m(&self) -> usize {
        self.states.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scaling(&self) -> &ScalingExponents {
        &self.scaling
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn pricing(&self) -> &PricingRule {
        &self.pricing
    }

    pub fn signals(&self) -> &SignalLaw {
        &self.signals
    }

    pub fn initial_price(&self) -> &InitialPriceLaw {
        &self.initial_price
    }

    pub fn initial_states(&self) -> &InitialStateLaw {
        &self.initial_states
    }

    pub fn moment_source(&self) -> MomentSource {
        self.moments
    }

    pub fn event_cap(&self) -> u64 {
        self.event_cap
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.population, Population::Homogeneous(_))
    }

    /// Total clamp events recorded by the behaviours of this spec.
    pub fn clamp_events(&self) -> u64 {
        match &self.population {
            Population::Homogeneous(b) => b.clamp_events(),
            Population::Heterogeneous(v) => v.iter().map(|b| b.clamp_events()).sum(),
        }
    }
}
