//! The two shipped herding markets and their closed-form analysis.

pub mod extended;
pub mod pure;
pub mod roots;
pub mod stationary;

pub use extended::{
    build_extended, equilibria, equilibrium_residuals, expected_price_trend, extended_opinion, Equilibrium,
    FundamentalWeight, LuxExtendedBehavior, LuxExtendedParams, EXTENDED_STATES,
};
pub use pure::{build_pure, opinion_counts, pure_limit_drift, pure_opinion, LuxPureBehavior, LuxPureParams, PURE_STATES};
pub use roots::{convergence_constant, convergence_root, gamma_threshold, tanh_fixed_point};
pub use stationary::{
    log_factorials, log_sum_exp, stationary_distribution, total_variation, ModeStructure, StationaryDistribution,
};
