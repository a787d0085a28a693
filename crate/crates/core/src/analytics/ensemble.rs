use crate::engine::{ModelSpec, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::integrators::Path;

/// Right-continuous step function: `values[k]` holds on `[times[k], times[k + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CadlagSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub horizon: f64,
}

impl CadlagSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::input("series needs matching, nonempty times and values"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::input("series times must be nondecreasing"));
        }
        if horizon < *times.last().unwrap() {
            return Err(Error::input("series horizon precedes its last jump"));
        }
        Ok(Self { times, values, horizon })
    }

    pub fn from_trajectory<F: Fn(f64, &[f64]) -> f64>(trajectory: &Trajectory, f: F) -> Self {
        let (times, values) = trajectory.path(f);
        Self {
            times,
            values,
            horizon: trajectory.horizon,
        }
    }

    /// Grid values of component `k`, each held until the next grid point.
    pub fn from_path(path: &Path, k: usize) -> Self {
        Self {
            times: path.times.clone(),
            values: path.component(k),
            horizon: *path.times.last().unwrap(),
        }
    }

    /// Value at the last jump at or before `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        self.values[k.saturating_sub(1)]
    }

    pub fn resample(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.value_at(t)).collect()
    }

    /// Pieces `(start, end, value)` restricted to `[from, horizon]`.
    pub fn pieces(&self, from: f64) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.times.len()).filter_map(move |k| {
            let end = self.times.get(k + 1).copied().unwrap_or(self.horizon);
            let start = self.times[k].max(from);
            (end > start).then_some((start, end, self.values[k]))
        })
    }

    /// Time average over `[from, horizon]`.
    pub fn time_average(&self, from: f64) -> f64 {
        let (mut area, mut span) = (0.0, 0.0);
        for (a, b, v) in self.pieces(from) {
            area += (b - a) * v;
            span += b - a;
        }
        if span > 0.0 {
            area / span
        } else {
            self.value_at(from)
        }
    }
}

/// Simulates one path and records each observable after every event.
pub fn record_series(
    spec: &ModelSpec,
    seed: u64,
    horizon: f64,
    observables: &[&(dyn Fn(f64, &[f64]) -> f64 + Sync)],
) -> Result<Vec<CadlagSeries>> {
    let mut sim = Simulator::new(spec.clone(), seed)?;
    let s = sim.snapshot();
    let mut times = vec![s.time];
    let mut values: Vec<Vec<f64>> = observables.iter().map(|f| vec![f(s.price, &s.character)]).collect();
    sim.advance_until(horizon, |e, s| {
        times.push(e.time);
        for (f, v) in observables.iter().zip(values.iter_mut()) {
            v.push(f(s.price, &s.character));
        }
    })?;
    Ok(values
        .into_iter()
        .map(|v| CadlagSeries {
            times: times.clone(),
            values: v,
            horizon,
        })
        .collect())
}

/// One path of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub price: CadlagSeries,
    pub opinion: CadlagSeries,
}

/// Equal-width histogram on `[low, high]`; values outside fall into the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], low: f64, high: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(high > low) {
            return Err(Error::input("histogram needs bins > 0 and high > low"));
        }
        let mut counts = vec![0u64; bins];
        let width = (high - low) / bins as f64;
        for &v in values {
            let k = (((v - low) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Self { low, high, counts })
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = (self.high - self.low) / self.counts.len() as f64;
        (0..self.counts.len()).map(|k| self.low + (k as f64 + 0.5) * w).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of the mass in bins whose centre satisfies `pred`.
    pub fn mass_where<P: Fn(f64) -> bool>(&self, pred: P) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hit: u64 = self
            .centers()
            .into_iter()
            .zip(&self.counts)
            .filter(|(c, _)| pred(*c))
            .map(|(_, k)| k)
            .sum();
        hit as f64 / total as f64
    }
}

/// Cross-sectional statistics of one observable.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `quantiles[j][t]` at probability `levels[j]`.
    pub quantiles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub grid: Vec<f64>,
    pub levels: Vec<f64>,
    pub price: ChannelSummary,
    pub opinion: ChannelSummary,
    pub terminal_opinion: Vec<f64>,
    pub terminal_histogram: Histogram,
}

pub const DEFAULT_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_channel(samples: &[Vec<f64>], points: usize, levels: &[f64]) -> ChannelSummary {
    let k = samples.len() as f64;
    let mut mean = Vec::with_capacity(points);
    let mut variance = Vec::with_capacity(points);
    let mut quantiles = vec![Vec::with_capacity(points); levels.len()];
    let mut column = Vec::with_capacity(samples.len());
    for t in 0..points {
        column.clear();
        column.extend(samples.iter().map(|s| s[t]));
        let m = column.iter().sum::<f64>() / k;
        let v = column.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k;
        column.sort_by(f64::total_cmp);
        mean.push(m);
        variance.push(v);
        for (q, &p) in quantiles.iter_mut().zip(levels) {
            q.push(quantile(&column, p));
        }
    }
    ChannelSummary {
        mean,
        variance,
        quantiles,
    }
}

/// Resamples every member onto `grid` and aggregates across members. Variances use
/// the population normalisation. The terminal histogram has `bins` cells on `[-1, 1]`.
pub fn summarize_ensemble(
    members: &[EnsembleMember],
    grid: &[f64],
    levels: &[f64],
    bins: usize,
) -> Result<EnsembleSummary> {
    if members.is_empty() {
        return Err(Error::input("ensemble is empty"));
    }
    if grid.is_empty() {
        return Err(Error::input("summary grid is empty"));
    }
    let horizon = members[0].price.horizon;
    if members
        .iter()
        .any(|m| m.price.horizon != horizon || m.opinion.horizon != horizon)
    {
        return Err(Error::input("ensemble members must share a horizon"));
    }
    if levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::input("quantile levels must lie in [0, 1]"));
    }
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    let prices: Vec<Vec<f64>> = members.iter().map(|m| m.price.resample(grid)).collect();
    let opinions: Vec<Vec<f64>> = members.iter().map(|m| m.opinion.resample(grid)).collect();
    let terminal_opinion: Vec<f64> = members.iter().map(|m| m.opinion.value_at(horizon)).collect();
    Ok(EnsembleSummary {
        grid: grid.to_vec(),
        price: summarize_channel(&prices, grid.len(), &sorted_levels),
        opinion: summarize_channel(&opinions, grid.len(), &sorted_levels),
        terminal_histogram: Histogram::build(&terminal_opinion, -1.0, 1.0, bins)?,
        terminal_opinion,
        levels: sorted_levels,
    })
}

/// `count + 1` equally spaced points from `0` to `horizon`.
pub fn uniform_grid(horizon: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|k| horizon * k as f64 / count as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64, horizon: f64) -> CadlagSeries {
        CadlagSeries::new(vec![0.0], vec![v], horizon).unwrap()
    }

    #[test]
    fn value_at_uses_last_jump() {
        let s = CadlagSeries::new(vec![0.0, 1.0, 2.5], vec![3.0, 4.0, 5.0], 4.0).unwrap();
        assert_eq!(s.value_at(0.0), 3.0);
        assert_eq!(s.value_at(0.999), 3.0);
        assert_eq!(s.value_at(1.0), 4.0);
        assert_eq!(s.value_at(3.0), 5.0);
        assert_eq!(s.resample(&[0.5, 2.5, 4.0]), vec![3.0, 5.0, 5.0]);
        assert!((s.time_average(0.0) - (3.0 + 1.5 * 4.0 + 1.5 * 5.0) / 4.0).abs() < 1e-15);
        assert!((s.time_average(2.0) - (0.5 * 4.0 + 1.5 * 5.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_series() {
        assert!(CadlagSeries::new(vec![], vec![], 1.0).is_err());
        assert!(CadlagSeries::new(vec![1.0, 0.5], vec![0.0, 0.0], 2.0).is_err());
        assert!(CadlagSeries::new(vec![0.0, 3.0], vec![0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn constant_path_has_zero_variance() {
        let m = EnsembleMember {
            price: constant(2.0, 10.0),
            opinion: constant(0.2, 10.0),
        };
        let s = summarize_ensemble(&[m], &uniform_grid(10.0, 20), &DEFAULT_LEVELS, 10).unwrap();
        assert!(s.price.variance.iter().all(|&v| v == 0.0));
        assert!(s.price.mean.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn two_paths_average() {
        let members: Vec<EnsembleMember> = [0.0, 1.0]
            .iter()
            .map(|&v| EnsembleMember {
                price: constant(v, 5.0),
                opinion: constant(v - 0.5, 5.0),
            })
            .collect();
        let s = summarize_ensemble(&members, &uniform_grid(5.0, 5), &DEFAULT_LEVELS, 4).unwrap();
        assert!(s.price.mean.iter().all(|&v| v == 0.5));
        assert!(s.price.variance.iter().all(|&v| v == 0.25));
        assert_eq!(s.terminal_histogram.counts, vec![0, 1, 0, 1]);
    }

    #[test]
    fn summary_errors() {
        assert!(summarize_ensemble(&[], &[0.0], &DEFAULT_LEVELS, 4).is_err());
        let a = EnsembleMember {
            price: constant(0.0, 5.0),
            opinion: constant(0.0, 5.0),
        };
        let b = EnsembleMember {
            price: constant(0.0, 6.0),
            opinion: constant(0.0, 6.0),
        };
        assert!(summarize_ensemble(&[a, b], &[0.0], &DEFAULT_LEVELS, 4).is_err());
    }

    #[test]
    fn histogram_mass() {
        let h = Histogram::build(&[-0.9, -0.5, 0.1, 0.7, 2.0], -1.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
        assert!((h.mass_where(|c| c > 0.0) - 0.6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(values in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let members: Vec<EnsembleMember> = values
                .iter()
                .map(|&v| EnsembleMember { price: constant(v, 1.0), opinion: constant(v / 10.0, 1.0) })
                .collect();
            let s = summarize_ensemble(&members, &[0.0, 1.0], &[0.9, 0.1, 0.5], 5).unwrap();
            for t in 0..2 {
                for j in 1..s.levels.len() {
                    prop_assert!(s.price.quantiles[j][t] >= s.price.quantiles[j - 1][t]);
                }
            }
        }
    }
}
