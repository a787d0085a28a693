use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::{rng_from_seed, SimRng};

use super::kernel::{action_masses, intra_action_time};
use super::model::{pick_cumulative, sample_categorical, ModelSpec, Population};
use super::snapshot::{compute_character, MarketSnapshot};

/// Prices beyond this magnitude abort the simulation.
pub const PRICE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Trade { demand: f64, price: f64 },
    Transition { from: usize, to: usize },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Trade { .. } => "trade",
            EventKind::Transition { .. } => "transition",
        }
    }
}

/// A single action, without the character it leaves behind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub actor_state: usize,
    /// Agent index; only known for heterogeneous populations.
    pub actor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub actor_state: usize,
    pub actor: Option<usize>,
    pub character_after: Vec<f64>,
}

impl EventRecord {
    fn new(event: &Event, snapshot: &MarketSnapshot) -> Self {
        Self {
            time: event.time,
            kind: event.kind,
            actor_state: event.actor_state,
            actor: event.actor,
            character_after: snapshot.character.clone(),
        }
    }
}

/// Piecewise-constant, right-continuous sample path stored as an event log.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: MarketSnapshot,
    pub events: Vec<EventRecord>,
    pub horizon: f64,
}

impl Trajectory {
    /// Number of events at or before `t`.
    fn events_through(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Price and character at time `t` (value of the last event at or before `t`).
    pub fn state_at(&self, t: f64) -> (f64, &[f64]) {
        let k = self.events_through(t);
        let character = if k == 0 {
            self.initial.character.as_slice()
        } else {
            self.events[k - 1].character_after.as_slice()
        };
        let price = self.events[..k]
            .iter()
            .rev()
            .find_map(|e| match e.kind {
                EventKind::Trade { price, .. } => Some(price),
                EventKind::Transition { .. } => None,
            })
            .unwrap_or(self.initial.price);
        (price, character)
    }

    /// Jump times (starting with the initial time) and the value of `f` after each.
    pub fn path<F: Fn(f64, &[f64]) -> f64>(&self, f: F) -> (Vec<f64>, Vec<f64>) {
        let mut times = Vec::with_capacity(self.events.len() + 1);
        let mut values = Vec::with_capacity(self.events.len() + 1);
        let mut price = self.initial.price;
        times.push(self.initial.time);
        values.push(f(price, &self.initial.character));
        for e in &self.events {
            if let EventKind::Trade { price: p, .. } = e.kind {
                price = p;
            }
            times.push(e.time);
            values.push(f(price, &e.character_after));
        }
        (times, values)
    }

    pub fn final_price(&self) -> f64 {
        self.state_at(f64::INFINITY).0
    }

    pub fn final_character(&self) -> &[f64] {
        self.state_at(f64::INFINITY).1
    }
}

/// Event-driven simulator of a finite market.
pub struct Simulator {
    spec: ModelSpec,
    snap: MarketSnapshot,
    unit: f64,
    events: u64,
    trade_mass: Vec<f64>,
    transition_mass: Vec<f64>,
    row: Vec<f64>,
}

impl Simulator {
    /// Draws the initial price and states from the spec's laws using `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let price = spec.initial_price().sample(&mut rng)?;
        let (n, m) = (spec.n(), spec.m());
        let (counts, agents) = if spec.is_homogeneous() {
            (spec.initial_states().sample_counts(n, m, &mut rng)?, None)
        } else {
            let agents = spec.initial_states().sample_agents(n, m, &mut rng)?;
            (counts_of(&agents, m), Some(agents))
        };
        Self::assemble(spec, 0.0, price, counts, agents, rng)
    }

    /// Starts from a given price and per-state counts (homogeneous populations only).
    pub fn from_counts(spec: ModelSpec, time: f64, price: f64, counts: Vec<u64>, seed: u64) -> Result<Self> {
        if !spec.is_homogeneous() {
            return Err(Error::input("per-state counts only determine homogeneous markets"));
        }
        Self::assemble(spec, time, price, counts, None, rng_from_seed(seed))
    }

    /// Starts from a given price and per-agent states.
    pub fn from_agents(spec: ModelSpec, time: f64, price: f64, agents: Vec<usize>, seed: u64) -> Result<Self> {
        if agents.len() != spec.n() || agents.iter().any(|&s| s >= spec.m()) {
            return Err(Error::input("agent states must list one valid state per agent"));
        }
        let counts = counts_of(&agents, spec.m());
        let agents = if spec.is_homogeneous() { None } else { Some(agents) };
        Self::assemble(spec, time, price, counts, agents, rng_from_seed(seed))
    }

    fn assemble(
        spec: ModelSpec,
        time: f64,
        price: f64,
        counts: Vec<u64>,
        agents: Option<Vec<usize>>,
        rng: SimRng,
    ) -> Result<Self> {
        if !price.is_finite() {
            return Err(Error::input("initial price must be finite"));
        }
        if counts.len() != spec.m() {
            return Err(Error::input(format!("expected {} state counts", spec.m())));
        }
        let character = compute_character(&counts, spec.n(), spec.scaling().d1())?;
        let m = spec.m();
        let mut sim = Self {
            unit: spec.scaling().character_unit(spec.n()),
            spec,
            snap: MarketSnapshot {
                time,
                price,
                counts,
                character,
                agent_states: agents,
                rng,
            },
            events: 0,
            trade_mass: Vec::new(),
            transition_mass: Vec::new(),
            row: vec![0.0; m],
        };
        let nu = sim.refresh_masses()?;
        if nu <= 0.0 {
            return Err(Error::FrozenMarket { nu, time });
        }
        Ok(sim)
    }

    /// Moves the market to a new state, keeping the random stream.
    pub fn reset(&mut self, time: f64, price: f64, counts: &[u64]) -> Result<()> {
        if !self.spec.is_homogeneous() {
            return Err(Error::input("reset by counts needs a homogeneous market"));
        }
        let character = compute_character(counts, self.spec.n(), self.spec.scaling().d1())?;
        self.snap.time = time;
        self.snap.price = price;
        self.snap.counts.clear();
        self.snap.counts.extend_from_slice(counts);
        self.snap.character = character;
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn snapshot(&self) -> &MarketSnapshot {
        &self.snap
    }

    pub fn into_snapshot(self) -> MarketSnapshot {
        self.snap
    }

    /// Events executed so far.
    pub fn event_count(&self) -> u64 {
        self.events
    }

    fn refresh_masses(&mut self) -> Result<f64> {
        action_masses(
            &self.spec,
            self.snap.price,
            &self.snap.character,
            &self.snap.counts,
            self.snap.agent_states.as_deref(),
            &mut self.trade_mass,
            &mut self.transition_mass,
        );
        let mut nu = 0.0;
        for &x in self.trade_mass.iter().chain(&self.transition_mass) {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Diverged {
                    time: self.snap.time,
                    detail: format!("action rate {x} is not a finite nonnegative number"),
                });
            }
            nu += x;
        }
        Ok(nu)
    }

    /// Executes the next event, unless it would happen after `horizon`.
    pub fn step(&mut self, horizon: f64) -> Result<Option<Event>> {
        let nu = self.refresh_masses()?;
        if nu <= 0.0 {
            return Err(Error::FrozenMarket { nu, time: self.snap.time });
        }
        let gamma: f64 = Exp1.sample(&mut self.snap.rng);
        let mut t = self.snap.time + intra_action_time(gamma, nu);
        if t <= self.snap.time {
            t = self.snap.time.next_up();
        }
        if t > horizon {
            return Ok(None);
        }
        if self.events >= self.spec.event_cap() {
            return Err(Error::EventBudgetExceeded { cap: self.spec.event_cap() });
        }
        self.snap.time = t;
        let lambda_total: f64 = self.trade_mass.iter().sum();
        let u = self.snap.rng.random::<f64>() * nu;
        let event = if u < lambda_total {
            let actor = pick_cumulative(&self.trade_mass, u);
            self.execute_trade(actor)?
        } else {
            let actor = pick_cumulative(&self.transition_mass, u - lambda_total);
            self.execute_transition(actor)
        };
        Ok(Some(event))
    }

    fn actor_state(&self, actor: usize) -> (usize, Option<usize>) {
        match &self.snap.agent_states {
            Some(states) => (states[actor], Some(actor)),
            None => (actor, None),
        }
    }

    fn behavior(&self, actor: usize) -> &dyn crate::engine::AgentBehavior {
        match self.spec.population() {
            Population::Homogeneous(b) => b.as_ref(),
            Population::Heterogeneous(bs) => bs[actor].as_ref(),
        }
    }

    /// Lets `actor` trade at the current time. `actor` is a state index for
    /// homogeneous markets and an agent index otherwise.
    pub fn execute_trade(&mut self, actor: usize) -> Result<Event> {
        let (state, agent) = self.actor_state(actor);
        let signal = self.spec.signals().sample(&mut self.snap.rng);
        let b = self.behavior(actor);
        let demand = b.excess_demand(state, self.snap.price, &self.snap.character, signal);
        if !demand.is_finite() {
            return Err(Error::Diverged {
                time: self.snap.time,
                detail: format!("excess demand {demand} at price {}", self.snap.price),
            });
        }
        let price = self.spec.pricing().apply(demand, self.snap.price, self.spec.n(), self.spec.scaling());
        if !price.is_finite() || price.abs() > PRICE_LIMIT {
            return Err(Error::Diverged {
                time: self.snap.time,
                detail: format!("price {price} after demand {demand}"),
            });
        }
        self.snap.price = price;
        self.events += 1;
        Ok(Event {
            time: self.snap.time,
            kind: EventKind::Trade { demand, price },
            actor_state: state,
            actor: agent,
        })
    }

    /// Lets `actor` draw a new state from its transition row.
    pub fn execute_transition(&mut self, actor: usize) -> Event {
        let (from, agent) = self.actor_state(actor);
        let mut row = std::mem::take(&mut self.row);
        self.behavior(actor)
            .transition_row(from, self.snap.price, &self.snap.character, &mut row);
        let to = sample_categorical(&row, &mut self.snap.rng);
        self.row = row;
        if to != from {
            self.snap.counts[from] -= 1;
            self.snap.counts[to] += 1;
            self.snap.character[from] = self.snap.counts[from] as f64 * self.unit;
            self.snap.character[to] = self.snap.counts[to] as f64 * self.unit;
            if let Some(states) = &mut self.snap.agent_states {
                states[actor] = to;
            }
        }
        self.events += 1;
        Event {
            time: self.snap.time,
            kind: EventKind::Transition { from, to },
            actor_state: from,
            actor: agent,
        }
    }

    /// Runs until the next event would fall after `horizon`, reporting every event.
    pub fn advance_until<F>(&mut self, horizon: f64, mut observer: F) -> Result<u64>
    where
        F: FnMut(&Event, &MarketSnapshot),
    {
        let start = self.events;
        while let Some(e) = self.step(horizon)? {
            observer(&e, &self.snap);
        }
        Ok(self.events - start)
    }

    /// Runs to `horizon` and records the full event log.
    pub fn run(mut self, horizon: f64) -> Result<Trajectory> {
        if !(horizon.is_finite() && horizon > self.snap.time) {
            return Err(Error::input(format!("horizon must exceed the start time, got {horizon}")));
        }
        let initial = self.snap.clone();
        let mut events = Vec::new();
        self.advance_until(horizon, |e, s| events.push(EventRecord::new(e, s)))?;
        Ok(Trajectory {
            initial,
            events,
            horizon,
        })
    }
}

fn counts_of(agents: &[usize], m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; m];
    for &s in agents {
        counts[s] += 1;
    }
    counts
}

/// Simulates `spec` on `[0, horizon]` with the given seed.
pub fn simulate_trajectory(spec: &ModelSpec, horizon: f64, seed: u64) -> Result<Trajectory> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::input(format!("horizon must be positive, got {horizon}")));
    }
    Simulator::new(spec.clone(), seed)?.run(horizon)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::engine::{ConstantBehavior, InitialStateLaw, PricingRule, ScalingExponents, SignalLaw, StateSpace};

    fn two_state(lambda: f64, mu: f64, n: usize) -> ModelSpec {
        let b = ConstantBehavior::new(
            vec![lambda, lambda],
            vec![mu, mu],
            vec![0.7, 0.3, 0.4, 0.6],
            vec![-1.0, 1.0],
        )
        .unwrap();
        ModelSpec::homogeneous(
            StateSpace::new(["lo", "hi"]).unwrap(),
            n,
            ScalingExponents::new(1.0, 0.5).unwrap(),
            Arc::new(b),
            PricingRule::affine(1.0).unwrap(),
            SignalLaw::centered_normal(0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn frozen_market_rejected_at_construction() {
        assert!(matches!(Simulator::new(two_state(0.0, 0.0, 10), 1), Err(Error::FrozenMarket { .. })));
    }

    #[test]
    fn single_state_self_loops() {
        let b = ConstantBehavior::new(vec![0.0], vec![1.0], vec![1.0], vec![0.0]).unwrap();
        let spec = ModelSpec::homogeneous(
            StateSpace::new(["only"]).unwrap(),
            5,
            ScalingExponents::new(1.0, 1.0).unwrap(),
            Arc::new(b),
            PricingRule::affine(1.0).unwrap(),
            SignalLaw::Constant(0.0),
        )
        .unwrap();
        let traj = simulate_trajectory(&spec, 10.0, 3).unwrap();
        assert!(!traj.events.is_empty());
        assert!(traj.events.iter().all(|e| e.character_after == vec![1.0]));
    }

    #[test]
    fn forced_actor_state() {
        let spec = two_state(0.0, 1.0, 10);
        let mut sim = Simulator::from_counts(spec, 0.0, 0.0, vec![10, 0], 9).unwrap();
        let e = sim.step(f64::INFINITY).unwrap().unwrap();
        assert_eq!(e.actor_state, 0);
    }

    #[test]
    fn zero_demand_keeps_price() {
        let b = ConstantBehavior::new(vec![1.0], vec![0.0], vec![1.0], vec![0.0]).unwrap();
        let spec = ModelSpec::homogeneous(
            StateSpace::new(["x"]).unwrap(),
            4,
            ScalingExponents::new(1.0, 0.5).unwrap(),
            Arc::new(b),
            PricingRule::affine(1.0).unwrap(),
            SignalLaw::Constant(0.0),
        )
        .unwrap()
        .with_initial_price(crate::engine::InitialPriceLaw::Fixed(7.0));
        let traj = simulate_trajectory(&spec, 5.0, 1).unwrap();
        assert_eq!(traj.final_price(), 7.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = two_state(1.0, 1.0, 50);
        let a = simulate_trajectory(&spec, 5.0, 42).unwrap();
        let b = simulate_trajectory(&spec, 5.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&spec, 5.0, 43).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn event_cap_enforced() {
        let spec = two_state(1.0, 1.0, 50).with_event_cap(10);
        assert!(matches!(
            simulate_trajectory(&spec, 100.0, 1),
            Err(Error::EventBudgetExceeded { cap: 10 })
        ));
    }

    #[test]
    fn divergence_detected() {
        let b = ConstantBehavior::new(vec![1.0], vec![0.0], vec![1.0], vec![1e13]).unwrap();
        let spec = ModelSpec::homogeneous(
            StateSpace::new(["x"]).unwrap(),
            1,
            ScalingExponents::new(1.0, 0.5).unwrap(),
            Arc::new(b),
            PricingRule::affine(1.0).unwrap(),
            SignalLaw::Constant(0.0),
        )
        .unwrap();
        assert!(matches!(simulate_trajectory(&spec, 10.0, 1), Err(Error::Diverged { .. })));
    }

    #[test]
    fn heterogeneous_tracks_agents() {
        let states = StateSpace::new(["a", "b"]).unwrap();
        let mk = |p: f64| -> Arc<dyn crate::engine::AgentBehavior> {
            Arc::new(ConstantBehavior::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![1.0 - p, p, p, 1.0 - p], vec![1.0, -1.0]).unwrap())
        };
        let behaviors = (0..20).map(|i| mk(if i % 2 == 0 { 0.1 } else { 0.9 })).collect();
        let spec = ModelSpec::heterogeneous(
            states,
            ScalingExponents::new(1.0, 0.5).unwrap(),
            behaviors,
            PricingRule::affine(1.0).unwrap(),
            SignalLaw::Constant(0.0),
        )
        .unwrap()
        .with_initial_states(InitialStateLaw::Counts(vec![20, 0]))
        .unwrap();
        let traj = simulate_trajectory(&spec, 20.0, 5).unwrap();
        assert!(traj.events.iter().all(|e| e.actor.is_some()));
        let mut states = vec![0usize; 20];
        let mut counts = [20u64, 0];
        for e in &traj.events {
            let a = e.actor.unwrap();
            assert_eq!(states[a], e.actor_state);
            if let EventKind::Transition { from, to } = e.kind {
                states[a] = to;
                counts[from] -= 1;
                counts[to] += 1;
            }
            assert_eq!(e.character_after, compute_character(&counts, 20, 1.0).unwrap());
        }
    }

    #[test]
    fn state_lookup_is_right_continuous() {
        let spec = two_state(1.0, 1.0, 10);
        let traj = simulate_trajectory(&spec, 3.0, 8).unwrap();
        let e = &traj.events[3];
        assert_eq!(traj.state_at(e.time).1, e.character_after.as_slice());
        assert_eq!(traj.state_at(e.time.next_down()).1, traj.events[2].character_after.as_slice());
    }
}
