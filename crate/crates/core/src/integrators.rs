//! Fixed-step integrators for the large-market limits and the finite-versus-limit
//! rate comparison.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::analytics::{convergence_regression, Regression};
use crate::coefficients::ExtendedLimit;
use crate::engine::{ModelSpec, Simulator};
use crate::error::{Error, Result};
use crate::lux::pure_limit_drift;
use crate::{rng_from_seed, SimRng};

/// Default integration step in model time units.
pub const DEFAULT_STEP: f64 = 1e-2;

pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct OdeProblem {
    pub dimension: usize,
    pub rhs: VectorField,
    pub initial: Vec<f64>,
    pub horizon: f64,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("dimension", &self.dimension)
            .field("initial", &self.initial)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl OdeProblem {
    pub fn new(rhs: VectorField, initial: Vec<f64>, horizon: f64) -> Self {
        Self {
            dimension: initial.len(),
            rhs,
            initial,
            horizon,
        }
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Self {
        Self {
            dimension: initial.len(),
            initial,
            ..self.clone()
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        (self.rhs)(t, y, &mut out);
        out
    }
}

#[derive(Clone)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    Sampled {
        dimension: usize,
        sampler: Arc<dyn Fn(&mut SimRng) -> Vec<f64> + Send + Sync>,
    },
}

impl InitialCondition {
    pub fn dimension(&self) -> usize {
        match self {
            InitialCondition::Fixed(v) => v.len(),
            InitialCondition::Sampled { dimension, .. } => *dimension,
        }
    }

    pub fn draw(&self, rng: &mut SimRng) -> Vec<f64> {
        match self {
            InitialCondition::Fixed(v) => v.clone(),
            InitialCondition::Sampled { sampler, .. } => sampler(rng),
        }
    }
}

/// `dY = drift(t, Y) dt + diffusion(t, Y) dW` with `W` of dimension `noise_dimension`.
///
/// The diffusion callback fills a row-major `dimension x noise_dimension` matrix.
#[derive(Clone)]
pub struct SdeProblem {
    pub dimension: usize,
    pub noise_dimension: usize,
    pub drift: VectorField,
    pub diffusion: VectorField,
    pub initial: InitialCondition,
    pub horizon: f64,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("dimension", &self.dimension)
            .field("noise_dimension", &self.noise_dimension)
            .field("horizon", &self.horizon)
            .finish()
    }
}

/// Uniform-grid solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub step: f64,
}

impl Path {
    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("paths hold at least the initial value")
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }
}

/// Number of steps and the actual step size for a requested step.
pub fn grid(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::param(format!("step must be positive, got {step}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param(format!("horizon must be positive, got {horizon}")));
    }
    let steps = ((horizon / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            time: t,
            detail: format!("non-finite state {y:?}"),
        })
    }
}

/// Classical fourth-order Runge–Kutta.
pub fn integrate_ode(problem: &OdeProblem, step: f64) -> Result<Path> {
    let (steps, h) = grid(problem.horizon, step)?;
    let d = problem.dimension;
    if d == 0 || problem.initial.len() != d {
        return Err(Error::param("initial value must match the problem dimension"));
    }
    let f = &problem.rhs;
    let mut y = problem.initial.clone();
    check_finite(0.0, &y)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(y.clone());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for s in 0..steps {
        let t = s as f64 * h;
        f(t, &y, &mut k1);
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..d {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t1 = (s + 1) as f64 * h;
        check_finite(t1, &y)?;
        times.push(t1);
        values.push(y.clone());
    }
    Ok(Path { times, values, step: h })
}

/// Value of a solved ODE path at any time, by cubic Hermite interpolation.
pub fn interpolate(problem: &OdeProblem, path: &Path, t: f64) -> Vec<f64> {
    let h = path.step;
    let last = path.times.len() - 1;
    let k = ((t / h).floor().max(0.0) as usize).min(last.saturating_sub(1));
    if last == 0 {
        return path.values[0].clone();
    }
    let (t0, t1) = (path.times[k], path.times[k + 1]);
    let (y0, y1) = (&path.values[k], &path.values[k + 1]);
    let d0 = problem.eval(t0, y0);
    let d1 = problem.eval(t1, y1);
    let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    let (h00, h10, h01, h11) = (
        2.0 * s * s * s - 3.0 * s * s + 1.0,
        s * s * s - 2.0 * s * s + s,
        -2.0 * s * s * s + 3.0 * s * s,
        s * s * s - s * s,
    );
    let dt = t1 - t0;
    (0..y0.len())
        .map(|i| h00 * y0[i] + h10 * dt * d0[i] + h01 * y1[i] + h11 * dt * d1[i])
        .collect()
}

/// Brownian increments on a uniform grid; row `s` holds the increment over step `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    pub step: f64,
    pub increments: Vec<Vec<f64>>,
}

impl BrownianIncrements {
    pub fn sample(steps: usize, dimension: usize, step: f64, rng: &mut SimRng) -> Self {
        let sd = step.sqrt();
        let increments = (0..steps)
            .map(|_| {
                (0..dimension)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    })
                    .collect()
            })
            .collect();
        Self { step, increments }
    }

    /// Halves the step, filling midpoints from the Brownian bridge so the refined
    /// increments sum to the coarse ones.
    pub fn refine(&self, rng: &mut SimRng) -> Self {
        let half = 0.5 * self.step;
        let sd = (self.step / 4.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for dw in &self.increments {
            let mut first = Vec::with_capacity(dw.len());
            let mut second = Vec::with_capacity(dw.len());
            for &w in dw {
                let z: f64 = StandardNormal.sample(rng);
                let a = 0.5 * w + sd * z;
                first.push(a);
                second.push(w - a);
            }
            increments.push(first);
            increments.push(second);
        }
        Self { step: half, increments }
    }
}

/// Euler–Maruyama with the initial value and increments drawn from `seed`.
pub fn integrate_sde(problem: &SdeProblem, step: f64, seed: u64) -> Result<Path> {
    let (steps, h) = grid(problem.horizon, step)?;
    let mut rng = rng_from_seed(seed);
    let initial = problem.initial.draw(&mut rng);
    let noise = BrownianIncrements::sample(steps, problem.noise_dimension, h, &mut rng);
    integrate_sde_with(problem, &initial, &noise)
}

/// Euler–Maruyama along given Brownian increments.
pub fn integrate_sde_with(problem: &SdeProblem, initial: &[f64], noise: &BrownianIncrements) -> Result<Path> {
    let d = problem.dimension;
    let k = problem.noise_dimension;
    if initial.len() != d {
        return Err(Error::param("initial value must match the problem dimension"));
    }
    let h = noise.step;
    let steps = noise.increments.len();
    let mut y = initial.to_vec();
    check_finite(0.0, &y)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(y.clone());
    let mut a = vec![0.0; d];
    let mut g = vec![0.0; d * k];
    for (s, dw) in noise.increments.iter().enumerate() {
        let t = s as f64 * h;
        (problem.drift)(t, &y, &mut a);
        (problem.diffusion)(t, &y, &mut g);
        for i in 0..d {
            let mut inc = a[i] * h;
            for (j, w) in dw.iter().enumerate() {
                inc += g[i * k + j] * w;
            }
            y[i] += inc;
        }
        let t1 = (s + 1) as f64 * h;
        check_finite(t1, &y)?;
        times.push(t1);
        values.push(y.clone());
    }
    Ok(Path { times, values, step: h })
}

/// Large-market opinion equation of the pure model, state `[vbar]`.
pub fn pure_limit_ode(beta: f64, gamma: f64, theta: f64, horizon: f64) -> OdeProblem {
    let rhs: VectorField = Arc::new(move |_, y, out| out[0] = pure_limit_drift(beta, gamma, y[0]));
    OdeProblem::new(rhs, vec![theta], horizon)
}

/// Noise-free large-market dynamics of the extended model, state `[x, vbar]`.
pub fn extended_limit_ode(limit: &ExtendedLimit, x0: f64, theta: f64, horizon: f64) -> OdeProblem {
    let l = limit.clone();
    let rhs: VectorField = Arc::new(move |_, y, out| {
        out[0] = l.price_drift(y[0], y[1]);
        out[1] = l.opinion_drift(y[0], y[1]);
    });
    OdeProblem::new(rhs, vec![x0, theta], horizon)
}

/// Large-market diffusion of the extended model, state `[x, vbar]`, one noise source
/// acting on the price only.
pub fn extended_limit_sde(limit: &ExtendedLimit, initial: InitialCondition, horizon: f64) -> SdeProblem {
    let l = limit.clone();
    let drift: VectorField = Arc::new(move |_, y, out| {
        out[0] = l.price_drift(y[0], y[1]);
        out[1] = l.opinion_drift(y[0], y[1]);
    });
    let sd = limit.price_diffusion();
    let diffusion: VectorField = Arc::new(move |_, _, out| {
        out[0] = sd;
        out[1] = 0.0;
    });
    SdeProblem {
        dimension: 2,
        noise_dimension: 1,
        drift,
        diffusion,
        initial,
        horizon,
    }
}

/// Sup distances for one market size.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: usize,
    /// One sup distance per seed, in seed order.
    pub distances: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateComparison {
    pub rows: Vec<RateRow>,
    pub regression: Option<Regression>,
}

/// `sup_t |obs(X^n_t, V^n_t) - Y_t[component]|` over `[0, horizon]`.
///
/// The finite path is piecewise constant, so the supremum is attained at event
/// times; both the value before and after each jump are compared against the
/// interpolated limit.
pub fn sup_distance<O>(
    spec: &ModelSpec,
    seed: u64,
    limit: &OdeProblem,
    limit_path: &Path,
    component: usize,
    observable: &O,
    horizon: f64,
) -> Result<f64>
where
    O: Fn(f64, &[f64]) -> f64,
{
    let mut sim = Simulator::new(spec.clone(), seed)?;
    let s = sim.snapshot();
    let mut current = observable(s.price, &s.character);
    let mut sup = (current - limit.initial[component]).abs();
    let mut err = None;
    sim.advance_until(horizon, |e, s| {
        let y = interpolate(limit, limit_path, e.time)[component];
        let next = observable(s.price, &s.character);
        let d = (current - y).abs().max((next - y).abs());
        if d.is_finite() {
            sup = sup.max(d);
        } else {
            err = Some(e.time);
        }
        current = next;
    })?;
    let y_end = limit_path.terminal()[component];
    sup = sup.max((current - y_end).abs());
    if let Some(t) = err {
        return Err(Error::Diverged {
            time: t,
            detail: "non-finite distance".into(),
        });
    }
    Ok(sup)
}

/// Runs every `(n, seed)` pair and regresses `log max distance` on `log n`.
pub fn rate_comparison<F, O>(
    spec_family: F,
    limit: &OdeProblem,
    component: usize,
    observable: O,
    ns: &[usize],
    horizon: f64,
    seeds: &[u64],
    step: f64,
) -> Result<RateComparison>
where
    F: Fn(usize) -> Result<ModelSpec> + Sync,
    O: Fn(f64, &[f64]) -> f64 + Sync,
{
    let mut problem = limit.clone();
    problem.horizon = horizon;
    let path = integrate_ode(&problem, step)?;
    let specs: Vec<ModelSpec> = ns.iter().map(|&n| spec_family(n)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..ns.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, seed)| sup_distance(&specs[i], seed, &problem, &path, component, &observable, horizon))
        .collect();
    let mut rows: Vec<RateRow> = ns
        .iter()
        .map(|&n| RateRow {
            n,
            distances: Vec::with_capacity(seeds.len()),
            max: 0.0,
            mean: 0.0,
        })
        .collect();
    for (&(i, _), r) in jobs.iter().zip(results) {
        rows[i].distances.push(r?);
    }
    for row in &mut rows {
        row.max = row.distances.iter().copied().fold(0.0, f64::max);
        row.mean = row.distances.iter().sum::<f64>() / row.distances.len().max(1) as f64;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max).collect();
    let regression = convergence_regression(&xs, &ys).ok();
    Ok(RateComparison { rows, regression })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lux::{tanh_fixed_point, FundamentalWeight, LuxExtendedParams};

    #[test]
    fn grid_rounds_up() {
        assert_eq!(grid(1.0, 0.3).unwrap().0, 4);
        assert_eq!(grid(1.0, 0.25).unwrap(), (4, 0.25));
        assert_eq!(grid(100.0, 0.01).unwrap().0, 10_000);
        assert!(grid(1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_decay_rk4() {
        let rhs: VectorField = Arc::new(|_, y, out| out[0] = -y[0]);
        let p = OdeProblem::new(rhs, vec![1.0], 1.0);
        let path = integrate_ode(&p, 0.01).unwrap();
        assert!((path.terminal()[0] - (-1.0f64).exp()).abs() < 1e-10);
        let mid = interpolate(&p, &path, 0.505);
        assert!((mid[0] - (-0.505f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let p = pure_limit_ode(0.3, 1.2, 0.0, 100.0);
        let path = integrate_ode(&p, DEFAULT_STEP).unwrap();
        assert!(path.values.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn high_herding_reaches_fixed_point() {
        let p = pure_limit_ode(0.3, 1.2, 0.1, 100.0);
        let path = integrate_ode(&p, DEFAULT_STEP).unwrap();
        assert!((path.terminal()[0] - tanh_fixed_point(1.2)).abs() < 1e-6);
    }

    #[test]
    fn rk4_order() {
        let p = pure_limit_ode(0.3, 1.2, 0.1, 10.0);
        let terminal = |h: f64| integrate_ode(&p, h).unwrap().terminal()[0];
        let (a, b, c) = (terminal(0.4), terminal(0.2), terminal(0.1));
        let ratio = (a - b) / (b - c);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
        assert!(ratio.log2() >= 3.5, "order {}", ratio.log2());
    }

    #[test]
    fn bridge_refinement_preserves_sums() {
        let mut rng = rng_from_seed(1);
        let w = BrownianIncrements::sample(10, 2, 0.1, &mut rng);
        let r = w.refine(&mut rng);
        assert_eq!(r.increments.len(), 20);
        assert_eq!(r.step, 0.05);
        for s in 0..10 {
            for j in 0..2 {
                let sum = r.increments[2 * s][j] + r.increments[2 * s + 1][j];
                assert!((sum - w.increments[s][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scaled_brownian_motion_variance() {
        let sd = 0.7;
        let p = SdeProblem {
            dimension: 1,
            noise_dimension: 1,
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(move |_, _, out| out[0] = sd),
            initial: InitialCondition::Fixed(vec![0.0]),
            horizon: 2.0,
        };
        let paths = 10_000;
        let mut sums = [0.0; 2];
        for seed in 0..paths {
            let path = integrate_sde(&p, 0.1, seed).unwrap();
            sums[0] += path.values[10][0].powi(2);
            sums[1] += path.values[20][0].powi(2);
        }
        let slope = (sums[1] - sums[0]) / paths as f64;
        assert!((slope - sd * sd).abs() < 0.05 * sd * sd, "slope {slope}");
    }

    #[test]
    fn noise_free_sde_matches_ode_to_first_order() {
        let mut params = LuxExtendedParams::reference(0.2, 0.8, FundamentalWeight::linear(1.0));
        params.signal_std = 0.0;
        let lim = ExtendedLimit::from_params(&params);
        let ode = integrate_ode(&extended_limit_ode(&lim, 48.0, 0.3, 50.0), 0.01).unwrap();
        let sde_problem = extended_limit_sde(&lim, InitialCondition::Fixed(vec![48.0, 0.3]), 50.0);
        let gap = |h: f64| {
            let sde = integrate_sde(&sde_problem, h, 3).unwrap();
            let te = sde.terminal();
            let to = ode.terminal();
            (te[0] - to[0]).abs().max((te[1] - to[1]).abs())
        };
        let (g1, g2) = (gap(0.02), gap(0.01));
        assert!(g1 < 0.02 && g2 < 0.01);
        assert!((g1 / g2 - 2.0).abs() < 0.3, "ratio {}", g1 / g2);
    }

    #[test]
    fn deterministic_given_seed() {
        let lim = ExtendedLimit::from_params(&LuxExtendedParams::reference(0.2, 1.2, FundamentalWeight::linear(1.0)));
        let p = extended_limit_sde(&lim, InitialCondition::Fixed(vec![48.0, 0.0]), 20.0);
        assert_eq!(integrate_sde(&p, 0.01, 9).unwrap(), integrate_sde(&p, 0.01, 9).unwrap());
    }
}
