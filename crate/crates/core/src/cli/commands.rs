use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{
    reproduce_figure, summarize_ensemble, uniform_grid, CadlagSeries, EnsembleMember, FigureOptions, DEFAULT_LEVELS,
    FIGURE_IDS,
};
use crate::coefficients::{finite_coefficients, monte_carlo_kernel, LimitModel, MomentEstimate};
use crate::derive_seed;
use crate::engine::{compute_character, simulate_trajectory, EventKind, ModelSpec, Trajectory};
use crate::error::{Error, Result};
use crate::integrators::{
    extended_limit_ode, extended_limit_sde, integrate_ode, integrate_sde, pure_limit_ode, rate_comparison,
    InitialCondition, Path,
};
use crate::lux::{
    build_pure, convergence_constant, extended_opinion, gamma_threshold, opinion_counts, pure_opinion,
    stationary_distribution, LuxPureParams,
};

use super::config::{ExperimentConfig, Format, Integrator, ModelConfig};
use super::output::{csv_text, slug, svg_plot, OutputWriter};

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub formats: &'a [Format],
}

impl Context<'_> {
    fn svg(&self) -> bool {
        self.formats.contains(&Format::Svg)
    }

    fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }
}

/// Reduced opinion coordinate of the configured model, if it has one.
fn opinion_of(model: &ModelConfig) -> Option<Box<dyn Fn(&[f64]) -> f64 + Sync>> {
    match model {
        ModelConfig::Pure(_) => Some(Box::new(pure_opinion)),
        ModelConfig::Extended(e) => {
            let phi = e.phi;
            Some(Box::new(move |c: &[f64]| extended_opinion(c, phi)))
        }
        ModelConfig::Custom(_) => None,
    }
}

fn trajectory_csv(spec: &ModelSpec, t: &Trajectory) -> String {
    let m = spec.m();
    let mut header = vec!["t".to_string(), "price".to_string()];
    header.extend((1..=m).map(|i| format!("v{i}")));
    header.push("kind".into());
    let mut out = header.join(",");
    out.push('\n');
    let row = |out: &mut String, time: f64, price: f64, character: &[f64], kind: &str| {
        let mut cells = vec![super::output::fmt_f64(time), super::output::fmt_f64(price)];
        cells.extend(character.iter().map(|&v| super::output::fmt_f64(v)));
        cells.push(kind.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    };
    row(&mut out, t.initial.time, t.initial.price, &t.initial.character, "initial");
    let mut price = t.initial.price;
    for e in &t.events {
        if let EventKind::Trade { price: p, .. } = e.kind {
            price = p;
        }
        row(&mut out, e.time, price, &e.character_after, e.kind.label());
    }
    out
}

/// Event-level trajectories for each ensemble member.
pub fn simulate(ctx: &Context, w: &mut OutputWriter) -> Result<String> {
    let cfg = ctx.config;
    let spec = cfg.spec()?;
    let horizon = cfg.run.horizon;
    let members: Vec<Trajectory> = (0..cfg.run.ensemble as u64)
        .into_par_iter()
        .map(|k| simulate_trajectory(&spec, horizon, derive_seed(ctx.seed, k)))
        .collect::<Result<_>>()?;
    let opinion = opinion_of(&cfg.model);
    let mut events = 0;
    for (k, t) in members.iter().enumerate() {
        events += t.events.len();
        if ctx.csv() {
            w.write(&format!("trajectory_{k}.csv"), trajectory_csv(&spec, t).as_bytes())?;
        }
        if ctx.svg() {
            let grid = uniform_grid(horizon, 2000);
            let price = CadlagSeries::from_trajectory(t, |p, _| p).resample(&grid);
            let mut series = vec![("price".to_string(), price)];
            if let Some(f) = &opinion {
                series.push(("vbar".into(), CadlagSeries::from_trajectory(t, |_, c| f(c)).resample(&grid)));
            }
            w.write(&format!("trajectory_{k}.svg"), svg_plot(&format!("trajectory {k}"), &grid, &series, 2000).as_bytes())?;
        }
    }
    if members.len() > 1 {
        if let Some(f) = &opinion {
            let ens: Vec<EnsembleMember> = members
                .iter()
                .map(|t| EnsembleMember {
                    price: CadlagSeries::from_trajectory(t, |p, _| p),
                    opinion: CadlagSeries::from_trajectory(t, |_, c| f(c)),
                })
                .collect();
            let grid = uniform_grid(horizon, 200);
            let s = summarize_ensemble(&ens, &grid, &DEFAULT_LEVELS, 20)?;
            let mut header = vec!["t".to_string()];
            for ch in ["price", "vbar"] {
                header.push(format!("{ch}_mean"));
                header.push(format!("{ch}_var"));
                header.extend(s.levels.iter().map(|p| format!("{ch}_q{p}")));
            }
            let rows = (0..grid.len()).map(|i| {
                let mut r = vec![grid[i]];
                for ch in [&s.price, &s.opinion] {
                    r.push(ch.mean[i]);
                    r.push(ch.variance[i]);
                    r.extend(ch.quantiles.iter().map(|q| q[i]));
                }
                r
            });
            w.write("ensemble_summary.csv", csv_text(&header, rows).as_bytes())?;
            let h = &s.terminal_histogram;
            let rows = h.centers().into_iter().zip(&h.counts).map(|(c, &k)| vec![c, k as f64]);
            w.write(
                "terminal_histogram.csv",
                csv_text(&["vbar".into(), "count".into()], rows).as_bytes(),
            )?;
        }
    }
    Ok(format!("simulated {} path(s), {events} events", members.len()))
}

fn path_csv(path: &Path, with_price: bool) -> String {
    let header = vec!["t".to_string(), "x".to_string(), "vbar".to_string()];
    let rows = path.times.iter().zip(&path.values).map(|(&t, v)| {
        if with_price {
            vec![t, v[0], v[1]]
        } else {
            vec![t, 0.0, v[0]]
        }
    });
    csv_text(&header, rows)
}

fn path_svg(title: &str, path: &Path, with_price: bool) -> String {
    let series = if with_price {
        vec![("x".to_string(), path.component(0)), ("vbar".to_string(), path.component(1))]
    } else {
        vec![("vbar".to_string(), path.component(0))]
    };
    svg_plot(title, &path.times, &series, 2000)
}

/// Large-market path(s) in `t,x,vbar` coordinates.
pub fn limit(ctx: &Context, w: &mut OutputWriter) -> Result<String> {
    let cfg = ctx.config;
    let horizon = cfg.run.horizon;
    let step = cfg.limit.step;
    let (paths, with_price): (Vec<Path>, bool) = match (&cfg.model, cfg.limit.integrator) {
        (ModelConfig::Pure(p), Integrator::Ode) => {
            let params = p.params()?;
            let theta = p.initial_opinion.unwrap_or(0.0);
            let path = integrate_ode(&pure_limit_ode(params.beta, params.gamma, theta, horizon), step)?;
            (vec![path], false)
        }
        (ModelConfig::Pure(_), Integrator::Sde) => {
            return Err(Error::Config(
                "limit.integrator: the pure limit is deterministic; use integrator = \"ode\"".into(),
            ))
        }
        (ModelConfig::Extended(e), integrator) => {
            let Some(LimitModel::Extended(lim)) = cfg.model.limit()? else { unreachable!() };
            let theta = e.initial_opinion.unwrap_or(0.0);
            match integrator {
                Integrator::Ode => (
                    vec![integrate_ode(&extended_limit_ode(&lim, e.initial_price, theta, horizon), step)?],
                    true,
                ),
                Integrator::Sde => {
                    let initial = match e.initial_price_std {
                        None => InitialCondition::Fixed(vec![e.initial_price, theta]),
                        Some(std) => {
                            let law = crate::engine::InitialPriceLaw::Normal {
                                mean: e.initial_price,
                                std,
                            };
                            InitialCondition::Sampled {
                                dimension: 2,
                                sampler: std::sync::Arc::new(move |rng| {
                                    vec![law.sample(rng).unwrap_or(f64::NAN), theta]
                                }),
                            }
                        }
                    };
                    let sde = extended_limit_sde(&lim, initial, horizon);
                    let paths = (0..cfg.run.ensemble as u64)
                        .into_par_iter()
                        .map(|k| integrate_sde(&sde, step, derive_seed(ctx.seed, k)))
                        .collect::<Result<_>>()?;
                    (paths, true)
                }
            }
        }
        (ModelConfig::Custom(_), _) => {
            return Err(Error::Config("model.kind: custom models have no closed-form limit".into()))
        }
    };
    for (k, path) in paths.iter().enumerate() {
        let name = if paths.len() == 1 { "path".to_string() } else { format!("path_{k}") };
        if ctx.csv() {
            w.write(&format!("{name}.csv"), path_csv(path, with_price).as_bytes())?;
        }
        if ctx.svg() {
            w.write(&format!("{name}.svg"), path_svg(&name, path, with_price).as_bytes())?;
        }
    }
    Ok(format!("integrated {} path(s) to t = {horizon}", paths.len()))
}

#[derive(Serialize)]
struct StationaryReport {
    n: usize,
    beta: f64,
    gamma: f64,
    gamma_threshold: f64,
    mode: &'static str,
}

fn pure_params(cfg: &ExperimentConfig, command: &str) -> Result<LuxPureParams> {
    match &cfg.model {
        ModelConfig::Pure(p) => p.params(),
        other => Err(Error::Config(format!(
            "model.kind: `{command}` needs the pure model, got {}",
            other.kind()
        ))),
    }
}

/// Closed-form stationary opinion law and its mode structure.
pub fn stationary(ctx: &Context, w: &mut OutputWriter) -> Result<String> {
    let p = pure_params(ctx.config, "stationary")?;
    let s = stationary_distribution(&p)?;
    let rows = s.lattice.iter().zip(&s.probabilities).map(|(&v, &q)| vec![v, q]);
    w.write(
        "stationary.csv",
        csv_text(&["vbar".into(), "probability".into()], rows).as_bytes(),
    )?;
    if ctx.svg() {
        w.write(
            "stationary.svg",
            svg_plot("stationary law", &s.lattice, &[("probability".into(), s.probabilities.clone())], 5000).as_bytes(),
        )?;
    }
    let mode = s.mode_structure.label();
    w.write_json(
        "stationary.json",
        &StationaryReport {
            n: p.n,
            beta: p.beta,
            gamma: p.gamma,
            gamma_threshold: gamma_threshold(p.n),
            mode,
        },
    )?;
    Ok(format!("mode: {mode}"))
}

#[derive(Serialize)]
struct ConvergeRow {
    n: usize,
    max: f64,
    mean: f64,
    bound: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct ConvergeReport {
    beta: f64,
    gamma: f64,
    horizon: f64,
    initial_opinion: f64,
    seeds: usize,
    constant: f64,
    rows: Vec<ConvergeRow>,
    slope: Option<f64>,
    intercept: Option<f64>,
    residuals: Option<Vec<f64>>,
    all_within_bound: bool,
}

/// Sup distance between finite opinion paths and the limit, per market size.
pub fn converge(ctx: &Context, w: &mut OutputWriter) -> Result<String> {
    let cfg = ctx.config;
    let p = pure_params(cfg, "converge")?;
    let c = &cfg.converge;
    let theta = c.initial_opinion;
    let cap = cfg.run.event_cap;
    let family = |n: usize| -> Result<ModelSpec> {
        let params = LuxPureParams::new(n, p.beta, p.gamma)?.with_initial_opinion(theta)?;
        Ok(build_pure(&params)?.with_event_cap(cap))
    };
    let seeds: Vec<u64> = (0..c.seeds as u64).map(|k| derive_seed(ctx.seed, k)).collect();
    let limit = pure_limit_ode(p.beta, p.gamma, theta, c.horizon);
    let r = rate_comparison(family, &limit, 0, |_, ch: &[f64]| pure_opinion(ch), &c.ns, c.horizon, &seeds, cfg.limit.step)?;
    let constant = convergence_constant(p.beta, p.gamma);
    let mut distance_rows = Vec::new();
    for row in &r.rows {
        for (k, &d) in row.distances.iter().enumerate() {
            distance_rows.push(vec![row.n as f64, k as f64, d]);
        }
    }
    w.write(
        "converge_distances.csv",
        csv_text(&["n".into(), "seed_index".into(), "distance".into()], distance_rows).as_bytes(),
    )?;
    let rows: Vec<ConvergeRow> = r
        .rows
        .iter()
        .map(|row| {
            let bound = constant / (row.n as f64).sqrt();
            ConvergeRow {
                n: row.n,
                max: row.max,
                mean: row.mean,
                bound,
                within_bound: row.max <= bound,
            }
        })
        .collect();
    let all_within_bound = rows.iter().all(|r| r.within_bound);
    let slope = r.regression.as_ref().map(|g| g.slope);
    w.write_json(
        "converge.json",
        &ConvergeReport {
            beta: p.beta,
            gamma: p.gamma,
            horizon: c.horizon,
            initial_opinion: theta,
            seeds: c.seeds,
            constant,
            rows,
            slope,
            intercept: r.regression.as_ref().map(|g| g.intercept),
            residuals: r.regression.as_ref().map(|g| g.residuals.clone()),
            all_within_bound,
        },
    )?;
    Ok(format!(
        "slope: {}, within bound: {all_within_bound}",
        slope.map_or("n/a".to_string(), |s| format!("{s:.4}"))
    ))
}

/// Tables behind figure `id`.
pub fn figure(ctx: &Context, id: u32, w: &mut OutputWriter) -> Result<String> {
    if !FIGURE_IDS.contains(&id) {
        return Err(Error::Config(format!(
            "unknown figure id {id}; expected {} to {}",
            FIGURE_IDS.start(),
            FIGURE_IDS.end()
        )));
    }
    let opts = FigureOptions {
        ode_step: ctx.config.limit.step,
        sde_step: ctx.config.limit.step,
        ..FigureOptions::default()
    };
    let f = reproduce_figure(id, ctx.seed, &opts)?;
    for t in &f.tables {
        let name = format!("figure{id}_{}", slug(&t.name));
        if ctx.csv() {
            w.write(&format!("{name}.csv"), csv_text(&t.columns, t.rows.iter().cloned()).as_bytes())?;
        }
        if ctx.svg() {
            let x: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
            let series: Vec<(String, Vec<f64>)> = (1..t.columns.len())
                .map(|k| (t.columns[k].clone(), t.rows.iter().map(|r| r[k]).collect()))
                .collect();
            w.write(
                &format!("{name}.svg"),
                svg_plot(&format!("{}: {}", f.title, t.name), &x, &series, 2000).as_bytes(),
            )?;
        }
    }
    Ok(format!("figure {id}: {} table(s)", f.tables.len()))
}

#[derive(Serialize)]
struct MomentCheck {
    quantity: String,
    predicted: f64,
    estimate: f64,
    std_error: f64,
    z_score: f64,
}

#[derive(Serialize)]
struct MomentPointReport {
    price: f64,
    counts: Vec<u64>,
    nu: f64,
    checks: Vec<MomentCheck>,
}

fn check(quantity: String, predicted: f64, e: MomentEstimate) -> MomentCheck {
    MomentCheck {
        quantity,
        predicted,
        estimate: e.mean,
        std_error: e.std_error,
        z_score: e.z_score(predicted),
    }
}

/// Finite coefficients against single-event Monte Carlo moments.
pub fn moments(ctx: &Context, w: &mut OutputWriter) -> Result<String> {
    let cfg = ctx.config;
    let spec = cfg.spec()?;
    let n = spec.n();
    let m = spec.m();
    let coeffs = finite_coefficients(&spec)?;
    let alpha = spec.pricing().alpha();
    if cfg.moments.points.is_empty() {
        return Err(Error::Config("moments.points: at least one point is required".into()));
    }
    let mut reports = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, pt) in cfg.moments.points.iter().enumerate() {
        let counts = match (&pt.counts, pt.opinion, &cfg.model) {
            (Some(c), None, _) => c.clone(),
            (None, Some(theta), ModelConfig::Pure(_)) => opinion_counts(n, theta)?.to_vec(),
            (None, Some(theta), ModelConfig::Extended(e)) => e.params()?.opinion_counts(theta)?,
            _ => {
                return Err(Error::Config(format!(
                    "moments.points[{k}]: give exactly one of counts and opinion (opinion needs a Lux model)"
                )))
            }
        };
        let v = compute_character(&counts, n, spec.scaling().d1())?;
        let r = monte_carlo_kernel(&spec, pt.price, &counts, cfg.moments.replications, derive_seed(ctx.seed, k as u64), &[])?;
        let z = coeffs.z(pt.price, &v)?;
        let sigma = coeffs.sigma(pt.price, &v)?;
        let b = coeffs.b(pt.price, &v)?;
        let c2 = coeffs.c2(pt.price, &v)?;
        let mut checks = vec![
            check("price_first".into(), alpha * z, r.price_first),
            check("price_second".into(), alpha * alpha * sigma * sigma, r.price_second),
        ];
        for i in 0..m {
            checks.push(check(format!("character_first[{i}]"), b[i], r.character_first[i]));
        }
        for i in 0..m {
            for j in 0..m {
                checks.push(check(
                    format!("character_second[{i}][{j}]"),
                    c2[i * m + j],
                    r.character_second[i * m + j],
                ));
            }
        }
        worst = checks.iter().map(|c| c.z_score).fold(worst, f64::max);
        reports.push(MomentPointReport {
            price: pt.price,
            counts,
            nu: r.nu,
            checks,
        });
    }
    let rows: Vec<String> = reports
        .iter()
        .enumerate()
        .flat_map(|(k, p)| {
            p.checks.iter().map(move |c| {
                format!(
                    "{k},{},{},{},{},{}",
                    c.quantity,
                    super::output::fmt_f64(c.predicted),
                    super::output::fmt_f64(c.estimate),
                    super::output::fmt_f64(c.std_error),
                    super::output::fmt_f64(c.z_score)
                )
            })
        })
        .collect();
    let mut text = "point,quantity,predicted,estimate,std_error,z_score\n".to_string();
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    w.write("moments.csv", text.as_bytes())?;
    w.write_json("moments.json", &reports)?;
    Ok(format!("{} point(s), largest z-score {worst:.3}", reports.len()))
}
