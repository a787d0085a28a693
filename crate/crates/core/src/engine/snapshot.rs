use crate::error::{Error, Result};
use crate::SimRng;

use super::model::negative_power;

/// Evolving state of a finite market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub time: f64,
    pub price: f64,
    /// Agents per state; sums to `n`.
    pub counts: Vec<u64>,
    /// `counts[i] * n^(-d1)`.
    pub character: Vec<f64>,
    /// Per-agent states, tracked only for heterogeneous populations.
    pub agent_states: Option<Vec<usize>>,
    pub rng: SimRng,
}

impl MarketSnapshot {
    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `character[1] - character[0]`, the average opinion of a two-state market.
    pub fn opinion(&self) -> f64 {
        self.character[1] - self.character[0]
    }
}

/// Scaled per-state counts `counts_i * n^(-d1)`.
pub fn compute_character(counts: &[u64], n: usize, d1: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::input("n must be positive"));
    }
    let total: u64 = counts.iter().sum();
    if total != n as u64 {
        return Err(Error::input(format!("counts sum to {total}, expected {n}")));
    }
    let unit = negative_power(n, d1);
    Ok(counts.iter().map(|&c| c as f64 * unit).collect())
}
