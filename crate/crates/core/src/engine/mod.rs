//! The finite microscopic market and its event-driven simulator.

mod kernel;
mod model;
mod simulator;
mod snapshot;

pub use kernel::{
    action_probabilities, aggregated_propensities, character_step_probabilities, sample_intra_action_time,
    ActionProbabilities, AggregatedPropensities, CharacterStep,
};
pub use model::{
    check_row, AgentBehavior, ConstantBehavior, DemandMoments, InitialPriceLaw, InitialStateLaw, ModelSpec,
    MomentSource, Perturbation, Population, PricingRule, ScalingExponents, SignalLaw, StateSpace,
    DEFAULT_EVENT_CAP, ROW_SUM_TOLERANCE,
};
pub use simulator::{simulate_trajectory, Event, EventKind, EventRecord, Simulator, Trajectory, PRICE_LIMIT};
pub use snapshot::{compute_character, MarketSnapshot};
