//! One-step quantities of the event chain: action probabilities, propensities,
//! character step probabilities and waiting times.

use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::SimRng;

use super::model::{ModelSpec, Population};
use super::snapshot::MarketSnapshot;

/// Probabilities of the next action and of its actor.
///
/// Actor weights are indexed by state for homogeneous populations and by agent
/// for heterogeneous ones. Weights of a category with zero total mass are all 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbabilities {
    pub nu: f64,
    pub lambda_total: f64,
    pub mu_total: f64,
    pub p_trade: f64,
    pub p_transition: f64,
    pub trade_weights: Vec<f64>,
    pub transition_weights: Vec<f64>,
}

impl ActionProbabilities {
    pub fn from_masses(trade_mass: &[f64], transition_mass: &[f64]) -> Result<Self> {
        if trade_mass.iter().chain(transition_mass).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::input("action rates must be finite and nonnegative"));
        }
        let lambda_total: f64 = trade_mass.iter().sum();
        let mu_total: f64 = transition_mass.iter().sum();
        let nu = lambda_total + mu_total;
        if nu <= 0.0 {
            return Err(Error::FrozenMarket { nu, time: f64::NAN });
        }
        let normalize = |v: &[f64], total: f64| -> Vec<f64> {
            if total > 0.0 {
                v.iter().map(|x| x / total).collect()
            } else {
                vec![0.0; v.len()]
            }
        };
        Ok(Self {
            nu,
            lambda_total,
            mu_total,
            p_trade: lambda_total / nu,
            p_transition: mu_total / nu,
            trade_weights: normalize(trade_mass, lambda_total),
            transition_weights: normalize(transition_mass, mu_total),
        })
    }
}

/// Trading and transition rate masses of every actor slot.
pub(crate) fn action_masses(
    spec: &ModelSpec,
    price: f64,
    character: &[f64],
    counts: &[u64],
    agents: Option<&[usize]>,
    trade: &mut Vec<f64>,
    transition: &mut Vec<f64>,
) {
    trade.clear();
    transition.clear();
    match spec.population() {
        Population::Homogeneous(b) => {
            for (i, &c) in counts.iter().enumerate() {
                if c == 0 {
                    trade.push(0.0);
                    transition.push(0.0);
                } else {
                    let c = c as f64;
                    trade.push(c * b.trading_intensity(i, price, character));
                    transition.push(c * b.transition_rate(i, price, character));
                }
            }
        }
        Population::Heterogeneous(bs) => {
            let agents = agents.expect("heterogeneous market tracks agent states");
            for (b, &s) in bs.iter().zip(agents) {
                trade.push(b.trading_intensity(s, price, character));
                transition.push(b.transition_rate(s, price, character));
            }
        }
    }
}

/// Probabilities of trade versus transition and of the acting agent.
pub fn action_probabilities(spec: &ModelSpec, snapshot: &MarketSnapshot) -> Result<ActionProbabilities> {
    let mut trade = Vec::new();
    let mut transition = Vec::new();
    action_masses(
        spec,
        snapshot.price,
        &snapshot.character,
        &snapshot.counts,
        snapshot.agent_states.as_deref(),
        &mut trade,
        &mut transition,
    );
    ActionProbabilities::from_masses(&trade, &transition).map_err(|e| match e {
        Error::FrozenMarket { nu, .. } => Error::FrozenMarket { nu, time: snapshot.time },
        e => e,
    })
}

/// Aggregated propensities to leave and to enter each state.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPropensities {
    pub leave: Vec<f64>,
    pub enter: Vec<f64>,
}

/// Propensities `n^(d1-1) M^i sum_{j != i} P^{ij}` and `n^(d1-1) sum_{j != i} M^j P^{ji}`
/// for a row-major `m x m` transition matrix.
pub fn aggregated_propensities(character: &[f64], n: usize, d1: f64, matrix: &[f64]) -> AggregatedPropensities {
    let m = character.len();
    assert_eq!(matrix.len(), m * m, "matrix must be m x m");
    let scale = (n as f64).powf(d1 - 1.0);
    let mut leave = vec![0.0; m];
    let mut enter = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            leave[i] += matrix[i * m + j];
            enter[i] += character[j] * matrix[j * m + i];
        }
        leave[i] *= scale * character[i];
        enter[i] *= scale;
    }
    AggregatedPropensities { leave, enter }
}

/// Probability that the next event raises or lowers the count of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterStep {
    pub p_up: f64,
    pub p_down: f64,
}

/// Per-state character step probabilities of the next event.
///
/// Rates are weighted by the transition rate of the agents actually occupying
/// each state.
pub fn character_step_probabilities(spec: &ModelSpec, snapshot: &MarketSnapshot) -> Result<Vec<CharacterStep>> {
    let probs = action_probabilities(spec, snapshot)?;
    let m = spec.m();
    let (price, character) = (snapshot.price, snapshot.character.as_slice());
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    let mut row = vec![0.0; m];
    let mut add = |state: usize, rate: f64, row: &[f64]| {
        for (j, &p) in row.iter().enumerate() {
            if j != state {
                down[state] += rate * p;
                up[j] += rate * p;
            }
        }
    };
    match spec.population() {
        Population::Homogeneous(b) => {
            for (i, &c) in snapshot.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                b.transition_row(i, price, character, &mut row);
                add(i, c as f64 * b.transition_rate(i, price, character), &row);
            }
        }
        Population::Heterogeneous(bs) => {
            let agents = snapshot.agent_states.as_deref().expect("heterogeneous market tracks agent states");
            for (b, &s) in bs.iter().zip(agents) {
                b.transition_row(s, price, character, &mut row);
                add(s, b.transition_rate(s, price, character), &row);
            }
        }
    }
    Ok(up
        .into_iter()
        .zip(down)
        .map(|(u, d)| CharacterStep {
            p_up: u / probs.nu,
            p_down: d / probs.nu,
        })
        .collect())
}

/// Waiting time `gamma / nu` for a unit-exponential draw `gamma`.
pub fn intra_action_time(gamma: f64, nu: f64) -> f64 {
    gamma / nu
}

/// Draws the waiting time until the next action at aggregate rate `nu`.
pub fn sample_intra_action_time(rng: &mut SimRng, nu: f64) -> Result<f64> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::input(format!("aggregate action rate must be positive, got {nu}")));
    }
    let gamma: f64 = Exp1.sample(rng);
    Ok(intra_action_time(gamma, nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn transitions_only() {
        let p = ActionProbabilities::from_masses(&[0.0, 0.0], &[2.0, 3.0]).unwrap();
        assert_eq!(p.p_trade, 0.0);
        assert_eq!(p.p_transition, 1.0);
        assert_eq!(p.trade_weights, vec![0.0, 0.0]);
        assert!((p.transition_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_trade_and_transition_rates() {
        let p = ActionProbabilities::from_masses(&[50.0, 50.0], &[50.0, 50.0]).unwrap();
        assert_eq!(p.nu, 200.0);
        assert_eq!(p.p_trade, 0.5);
    }

    #[test]
    fn frozen_market_rejected() {
        let e = ActionProbabilities::from_masses(&[0.0], &[0.0]).unwrap_err();
        assert!(matches!(e, Error::FrozenMarket { .. }));
    }

    #[test]
    fn propensities() {
        let matrix = [0.6, 0.4, 0.3, 0.7];
        let a = aggregated_propensities(&[0.5, 0.5], 2, 1.0, &matrix);
        assert!((a.leave[0] - 0.2).abs() < 1e-15);
        assert!((a.enter[0] - 0.15).abs() < 1e-15);

        let a = aggregated_propensities(&[0.0, 1.0], 2, 1.0, &matrix);
        assert_eq!(a.leave[0], 0.0);

        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = aggregated_propensities(&[0.2, 0.3, 0.5], 10, 1.0, &id);
        assert!(a.leave.iter().chain(&a.enter).all(|&x| x == 0.0));
    }

    #[test]
    fn waiting_time_scales_with_rate() {
        assert_eq!(intra_action_time(1.0, 200.0), 0.005);
        let a = sample_intra_action_time(&mut rng_from_seed(5), 100.0).unwrap();
        let b = sample_intra_action_time(&mut rng_from_seed(5), 200.0).unwrap();
        assert_eq!(a, 2.0 * b);
        assert!(sample_intra_action_time(&mut rng_from_seed(5), 0.0).is_err());
    }

    #[test]
    fn waiting_time_mean() {
        let mut rng = rng_from_seed(17);
        let draws = 1_000_000;
        let mean = (0..draws).map(|_| sample_intra_action_time(&mut rng, 100.0).unwrap()).sum::<f64>() / draws as f64;
        assert!((mean - 0.01).abs() < 0.01 * 0.01, "mean {mean}");
    }
}
