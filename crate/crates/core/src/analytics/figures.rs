use rayon::prelude::*;

use crate::coefficients::ExtendedLimit;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::integrators::{
    extended_limit_ode, extended_limit_sde, integrate_ode, integrate_sde, pure_limit_ode, InitialCondition, Path,
    DEFAULT_STEP,
};
use crate::lux::{build_extended, extended_opinion, FundamentalWeight, LuxExtendedParams};

use super::ensemble::record_series;
use super::regime::Regime;

pub const FIGURE_IDS: std::ops::RangeInclusive<u32> = 1..=8;

/// Named numeric table; every row has one entry per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub id: u32,
    pub title: String,
    pub tables: Vec<Table>,
}

impl FigureData {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOptions {
    pub ode_step: f64,
    pub sde_step: f64,
    /// Spacing of emitted rows; finite paths are resampled, grid paths thinned.
    /// `None` uses a per-figure spacing.
    pub output_every: Option<f64>,
    /// Horizon of the long diffusion run.
    pub long_horizon: f64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            ode_step: DEFAULT_STEP,
            sde_step: DEFAULT_STEP,
            output_every: None,
            long_horizon: 100_000.0,
        }
    }
}

/// Parameters of the reference run for each long-run regime.
pub fn regime_case(regime: Regime) -> LuxExtendedParams {
    match regime {
        Regime::TwoEquilibria => LuxExtendedParams::reference(0.2, 1.2, FundamentalWeight::linear(1.0)),
        Regime::SingleStable => LuxExtendedParams::reference(0.2, 0.8, FundamentalWeight::linear(1.0)),
        Regime::Oscillatory => LuxExtendedParams::reference(1.2, 0.8, FundamentalWeight::linear(0.05)),
    }
}

/// `count` equally spaced initial opinions on `[-0.9, 0.9]`.
pub fn initial_opinions(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| -0.9 + 1.8 * k as f64 / (count - 1) as f64)
        .collect()
}

fn thin(path: &Path, every: f64) -> Vec<usize> {
    let stride = ((every / path.step).round() as usize).max(1);
    (0..path.times.len()).step_by(stride).collect()
}

fn path_table(name: &str, path: &Path, every: f64, labels: &[&str]) -> Table {
    let rows = thin(path, every)
        .into_iter()
        .map(|k| {
            let mut r = vec![path.times[k]];
            r.extend_from_slice(&path.values[k]);
            r
        })
        .collect();
    let mut columns = vec!["t".to_string()];
    columns.extend(labels.iter().map(|s| s.to_string()));
    Table {
        name: name.into(),
        columns,
        rows,
    }
}

fn pure_figure(every: f64, opts: &FigureOptions) -> Result<Vec<Table>> {
    let thetas = initial_opinions(9);
    let mut tables = Vec::new();
    for gamma in [0.8, 1.2] {
        let paths: Vec<Path> = thetas
            .par_iter()
            .map(|&theta| integrate_ode(&pure_limit_ode(0.3, gamma, theta, 100.0), opts.ode_step))
            .collect::<Result<_>>()?;
        let idx = thin(&paths[0], every);
        let mut columns = vec!["t".to_string()];
        columns.extend(thetas.iter().map(|t| format!("vbar0={t:+.3}")));
        let rows = idx
            .into_iter()
            .map(|k| {
                let mut r = vec![paths[0].times[k]];
                r.extend(paths.iter().map(|p| p.values[k][0]));
                r
            })
            .collect();
        tables.push(Table {
            name: format!("gamma={gamma}"),
            columns,
            rows,
        });
    }
    Ok(tables)
}

/// Expected initial opinion under the initial-state law of `params`.
fn mean_initial_opinion(params: &LuxExtendedParams) -> f64 {
    match &params.initial_states {
        Some(crate::engine::InitialStateLaw::Counts(c)) => {
            let noise = (c[0] + c[1]) as f64;
            if noise > 0.0 {
                (c[1] as f64 - c[0] as f64) / noise
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

fn initial_price_condition(params: &LuxExtendedParams, theta: f64) -> InitialCondition {
    match params.initial_price {
        crate::engine::InitialPriceLaw::Fixed(p) => InitialCondition::Fixed(vec![p, theta]),
        law => InitialCondition::Sampled {
            dimension: 2,
            sampler: std::sync::Arc::new(move |rng| vec![law.sample(rng).unwrap_or(f64::NAN), theta]),
        },
    }
}

/// Finite path of size `params.n` next to a diffusion path, both over 1000 units.
fn comparison_figure(params: &LuxExtendedParams, seed: u64, every: f64, opts: &FigureOptions) -> Result<Vec<Table>> {
    let horizon = 1000.0;
    let spec = build_extended(params)?;
    let phi = params.phi_n();
    let limit = ExtendedLimit::from_params(params);
    let sde = extended_limit_sde(&limit, initial_price_condition(params, mean_initial_opinion(params)), horizon);
    let (finite, diffusion) = rayon::join(
        || {
            let opinion = move |_: f64, c: &[f64]| extended_opinion(c, phi);
            let price = |x: f64, _: &[f64]| x;
            record_series(&spec, derive_seed(seed, 0), horizon, &[&price, &opinion])
        },
        || integrate_sde(&sde, opts.sde_step, derive_seed(seed, 1)),
    );
    let finite = finite?;
    let count = (horizon / every).round() as usize;
    let rows = (0..=count)
        .map(|k| {
            let t = horizon * k as f64 / count as f64;
            vec![t, finite[0].value_at(t), finite[1].value_at(t)]
        })
        .collect();
    Ok(vec![
        Table {
            name: format!("finite-n{}", params.n),
            columns: vec!["t".into(), "x".into(), "vbar".into()],
            rows,
        },
        path_table("limit", &diffusion?, every, &["x", "vbar"]),
    ])
}

fn noise_free_figure(params: &LuxExtendedParams, every: f64, opts: &FigureOptions) -> Result<Vec<Table>> {
    let limit = ExtendedLimit::from_params(params);
    let x0 = match params.initial_price {
        crate::engine::InitialPriceLaw::Fixed(p) => p,
        crate::engine::InitialPriceLaw::Normal { mean, .. } => mean,
    };
    let thetas = initial_opinions(9);
    let paths: Vec<Path> = thetas
        .par_iter()
        .map(|&theta| integrate_ode(&extended_limit_ode(&limit, x0, theta, 100.0), opts.ode_step))
        .collect::<Result<_>>()?;
    Ok(thetas
        .iter()
        .zip(&paths)
        .map(|(theta, p)| path_table(&format!("vbar0={theta:+.3}"), p, every, &["x", "vbar"]))
        .collect())
}

/// Data behind figure `id`:
///
/// * 1: pure-model opinion equation, `beta = 0.3`, `gamma` 0.8 and 1.2, nine starts.
/// * 2–4: finite market with `n = 100` against its diffusion limit over 1000 units,
///   one per regime (two equilibria, single stable, oscillatory).
/// * 5: the two-equilibria diffusion over the long horizon.
/// * 6–8: noise-free extended dynamics over 100 units, nine starts, one per regime.
pub fn reproduce_figure(id: u32, seed: u64, opts: &FigureOptions) -> Result<FigureData> {
    let regimes = [Regime::TwoEquilibria, Regime::SingleStable, Regime::Oscillatory];
    let (title, tables) = match id {
        1 => (
            "pure opinion equation, beta = 0.3".to_string(),
            pure_figure(opts.output_every.unwrap_or(0.1), opts)?,
        ),
        2..=4 => {
            let r = regimes[(id - 2) as usize];
            (
                format!("finite market and diffusion limit, {}", r.label()),
                comparison_figure(&regime_case(r), seed, opts.output_every.unwrap_or(0.1), opts)?,
            )
        }
        5 => {
            let params = regime_case(Regime::TwoEquilibria);
            let limit = ExtendedLimit::from_params(&params);
            let sde = extended_limit_sde(&limit, initial_price_condition(&params, 0.0), opts.long_horizon);
            let path = integrate_sde(&sde, opts.sde_step, derive_seed(seed, 1))?;
            (
                "long diffusion run, two-equilibria".to_string(),
                vec![path_table("limit", &path, opts.output_every.unwrap_or(10.0), &["x", "vbar"])],
            )
        }
        6..=8 => {
            let r = regimes[(id - 6) as usize];
            (
                format!("noise-free limit, {}", r.label()),
                noise_free_figure(&regime_case(r), opts.output_every.unwrap_or(0.1), opts)?,
            )
        }
        _ => return Err(Error::input(format!("unknown figure id {id}; expected 1 to 8"))),
    };
    Ok(FigureData { id, title, tables })
}
