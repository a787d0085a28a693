use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{ExtendedLimit, LimitModel};
use crate::engine::{
    ConstantBehavior, InitialPriceLaw, InitialStateLaw, ModelSpec, PricingRule, ScalingExponents, SignalLaw,
    StateSpace, DEFAULT_EVENT_CAP,
};
use crate::error::{Error, Result};
use crate::integrators::DEFAULT_STEP;
use crate::lux::{build_extended, build_pure, FundamentalWeight, LuxExtendedParams, LuxPureParams};

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_horizon() -> f64 {
    100.0
}

fn default_ensemble() -> usize {
    1
}

fn default_event_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

fn default_ns() -> Vec<usize> {
    vec![100, 400, 1600]
}

fn default_converge_seeds() -> usize {
    50
}

fn default_converge_opinion() -> f64 {
    0.5
}

fn default_replications() -> usize {
    1_000_000
}

/// A complete experiment description. See `configs/README.md` for the grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub limit: LimitConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Pure(PureModel),
    Extended(ExtendedModel),
    Custom(CustomModel),
}

/// Pure herding market. `mu`, `d1` and `lambda` are fixed by the model and only
/// accepted at their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PureModel {
    pub n: usize,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub d1: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Deterministic start; i.i.d. uniform opinions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_opinion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtendedModel {
    pub n: usize,
    /// Fundamentalist share; `phi * n` must be an integer.
    pub phi: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub lambda_bar: f64,
    pub w1: f64,
    /// Fundamentalist demand `w2_kappa * (F - x)`.
    #[serde(default = "one")]
    pub w2_kappa: f64,
    pub fundamental: f64,
    pub signal_std: f64,
    pub initial_price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_price_std: Option<f64>,
    /// Deterministic noise-trader start; i.i.d. uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_opinion: Option<f64>,
}

/// Homogeneous market with state-dependent constant behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub states: Vec<String>,
    pub n: usize,
    #[serde(default = "one")]
    pub d1: f64,
    #[serde(default = "half")]
    pub d2: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    pub trading_intensity: Vec<f64>,
    pub transition_rate: Vec<f64>,
    pub transition_matrix: Vec<Vec<f64>>,
    pub demand: Vec<f64>,
    #[serde(default)]
    pub signal_mean: f64,
    #[serde(default)]
    pub signal_std: f64,
    #[serde(default)]
    pub initial_price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Paths per command; member `k` uses the stream `k` of the command seed.
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_event_cap")]
    pub event_cap: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            ensemble: default_ensemble(),
            event_cap: default_event_cap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Ode,
    Sde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_integrator() -> Integrator {
    Integrator::Ode
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Ode,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format {other:?}; expected csv or svg")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: default_formats(),
        }
    }
}

/// Finite-versus-limit comparison for the pure model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_converge_seeds")]
    pub seeds: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_converge_opinion")]
    pub initial_opinion: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            ns: default_ns(),
            seeds: default_converge_seeds(),
            horizon: default_horizon(),
            initial_opinion: default_converge_opinion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentPoint {
    #[serde(default)]
    pub price: f64,
    /// Per-state counts; for the Lux models `opinion` may be given instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub points: Vec<MomentPoint>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            points: Vec::new(),
        }
    }
}

fn keyed(key: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidParameter(m) | Error::InvalidInput(m) | Error::Config(m) => Error::Config(format!("{key}: {m}")),
        other => other,
    }
}

impl PureModel {
    pub fn params(&self) -> Result<LuxPureParams> {
        for (name, v, want) in [("mu", self.mu, 1.0), ("d1", self.d1, 1.0), ("lambda", self.lambda, 0.0)] {
            if v != want {
                return Err(Error::Config(format!("model.{name}: the pure model fixes {name} = {want}, got {v}")));
            }
        }
        let p = LuxPureParams::new(self.n, self.beta, self.gamma).map_err(keyed("model"))?;
        match self.initial_opinion {
            Some(theta) => p.with_initial_opinion(theta).map_err(keyed("model.initial_opinion")),
            None => Ok(p),
        }
    }
}

impl ExtendedModel {
    pub fn params(&self) -> Result<LuxExtendedParams> {
        let k = self.phi * self.n as f64;
        if !(0.0..=1.0).contains(&self.phi) || (k - k.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "model.phi: phi * n must be an integer in [0, n], got {} * {}",
                self.phi, self.n
            )));
        }
        if !(self.w2_kappa.is_finite() && self.w2_kappa > 0.0) {
            return Err(Error::Config(format!("model.w2_kappa: must be positive, got {}", self.w2_kappa)));
        }
        let initial_price = match self.initial_price_std {
            None => InitialPriceLaw::Fixed(self.initial_price),
            Some(std) if std.is_finite() && std > 0.0 => InitialPriceLaw::Normal {
                mean: self.initial_price,
                std,
            },
            Some(std) => {
                return Err(Error::Config(format!("model.initial_price_std: must be positive, got {std}")));
            }
        };
        let mut p = LuxExtendedParams {
            n: self.n,
            k_n: k.round() as usize,
            beta: self.beta,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            alpha: self.alpha,
            lambda_bar: self.lambda_bar,
            w1: self.w1,
            w2: FundamentalWeight::linear(self.w2_kappa),
            fundamental: self.fundamental,
            signal_std: self.signal_std,
            initial_price,
            initial_states: None,
        };
        p.validate().map_err(keyed("model"))?;
        if let Some(theta) = self.initial_opinion {
            p.initial_states = Some(InitialStateLaw::Counts(
                p.opinion_counts(theta).map_err(keyed("model.initial_opinion"))?,
            ));
        }
        Ok(p)
    }
}

impl CustomModel {
    pub fn spec(&self) -> Result<ModelSpec> {
        let m = self.states.len();
        if self.transition_matrix.len() != m || self.transition_matrix.iter().any(|r| r.len() != m) {
            return Err(Error::Config(format!("model.transition_matrix: expected {m} rows of length {m}")));
        }
        let behavior = ConstantBehavior::new(
            self.trading_intensity.clone(),
            self.transition_rate.clone(),
            self.transition_matrix.concat(),
            self.demand.clone(),
        )
        .map_err(keyed("model"))?;
        let signal = if self.signal_std == 0.0 {
            SignalLaw::Constant(self.signal_mean)
        } else {
            SignalLaw::Normal {
                mean: self.signal_mean,
                std: self.signal_std,
            }
        };
        let initial = match (&self.initial_counts, &self.initial_probabilities) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "model: give at most one of initial_counts and initial_probabilities".into(),
                ))
            }
            (Some(c), None) => InitialStateLaw::Counts(c.clone()),
            (None, Some(p)) => InitialStateLaw::Iid(p.clone()),
            (None, None) => InitialStateLaw::uniform(m),
        };
        ModelSpec::homogeneous(
            StateSpace::new(self.states.clone()).map_err(keyed("model.states"))?,
            self.n,
            ScalingExponents::new(self.d1, self.d2).map_err(keyed("model"))?,
            std::sync::Arc::new(behavior),
            PricingRule::affine(self.alpha).map_err(keyed("model.alpha"))?,
            signal,
        )
        .map_err(keyed("model"))?
        .with_initial_price(InitialPriceLaw::Fixed(self.initial_price))
        .with_initial_states(initial)
        .map_err(keyed("model"))
    }
}

impl ModelConfig {
    /// Finite market described by the section.
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::Pure(p) => build_pure(&p.params()?).map_err(keyed("model")),
            ModelConfig::Extended(e) => build_extended(&e.params()?).map_err(keyed("model")),
            ModelConfig::Custom(c) => c.spec(),
        }
    }

    pub fn limit(&self) -> Result<Option<LimitModel>> {
        Ok(match self {
            ModelConfig::Pure(p) => Some(LimitModel::pure(&p.params()?)),
            ModelConfig::Extended(e) => Some(LimitModel::Extended(ExtendedLimit::from_params(&e.params()?))),
            ModelConfig::Custom(_) => None,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Pure(_) => "pure",
            ModelConfig::Extended(_) => "extended",
            ModelConfig::Custom(_) => "custom",
        }
    }
}

impl ExperimentConfig {
    /// Checks every section against the model invariants.
    pub fn validate(&self) -> Result<()> {
        self.model.spec()?;
        let r = &self.run;
        if !(r.horizon.is_finite() && r.horizon > 0.0) {
            return Err(Error::Config(format!("run.horizon: must be positive, got {}", r.horizon)));
        }
        if r.ensemble == 0 {
            return Err(Error::Config("run.ensemble: must be at least 1".into()));
        }
        if r.event_cap == 0 {
            return Err(Error::Config("run.event_cap: must be at least 1".into()));
        }
        if !(self.limit.step.is_finite() && self.limit.step > 0.0) {
            return Err(Error::Config(format!("limit.step: must be positive, got {}", self.limit.step)));
        }
        if self.outputs.formats.is_empty() {
            return Err(Error::Config("outputs.formats: at least one format is required".into()));
        }
        let c = &self.converge;
        if c.ns.len() < 3 || c.ns.iter().any(|&n| n < 2 || n % 2 != 0) {
            return Err(Error::Config("converge.ns: need at least three even market sizes".into()));
        }
        if c.seeds == 0 || !(c.horizon.is_finite() && c.horizon > 0.0) || !(-1.0..=1.0).contains(&c.initial_opinion) {
            return Err(Error::Config(
                "converge: seeds must be positive, horizon positive and initial_opinion in [-1, 1]".into(),
            ));
        }
        if self.moments.replications < 2 {
            return Err(Error::Config("moments.replications: must be at least 2".into()));
        }
        Ok(())
    }

    /// Final spec including the run section's event cap.
    pub fn spec(&self) -> Result<ModelSpec> {
        Ok(self.model.spec()?.with_event_cap(self.run.event_cap))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}

/// Parses and validates a config document; errors carry line and key information.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "[model]\nkind = \"pure\"\nn = 100\nbeta = 0.3\ngamma = 0.8\n";

    #[test]
    fn minimal_pure_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        let ModelConfig::Pure(p) = &c.model else { panic!() };
        assert_eq!((p.mu, p.d1, p.lambda), (1.0, 1.0, 0.0));
        assert_eq!(c.run, RunConfig::default());
        assert_eq!(c.limit.step, 0.01);
        assert_eq!(c.outputs.formats, vec![Format::Csv]);
    }

    #[test]
    fn odd_n_rejected() {
        let e = parse_config_str(&MINIMAL.replace("n = 100", "n = 101")).unwrap_err();
        assert!(e.to_string().contains("n must be even"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn beta_constraint_rejected() {
        let e = parse_config_str(&MINIMAL.replace("beta = 0.3", "beta = 0.5")).unwrap_err();
        assert!(e.to_string().contains("exp(-gamma)"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config_str(&format!("{MINIMAL}colour = 3\n")).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let e = parse_config_str(&format!("{MINIMAL}[run]\nhorizn = 3\n")).unwrap_err();
        assert!(e.to_string().contains("horizn"), "{e}");
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn non_default_pure_rates_rejected() {
        let e = parse_config_str(&format!("{MINIMAL}mu = 2.0\n")).unwrap_err();
        assert!(e.to_string().contains("model.mu"), "{e}");
    }

    #[test]
    fn extended_phi_must_divide() {
        let text = "[model]\nkind = \"extended\"\nn = 100\nphi = 0.205\nbeta = 0.12\ngamma1 = 0.2\ngamma2 = 1.2\n\
                    w1 = 1.0\nfundamental = 50.0\nsignal_std = 0.2\ninitial_price = 48.0\n";
        assert!(parse_config_str(text).unwrap_err().to_string().contains("model.phi"));
        let c = parse_config_str(&text.replace("0.205", "0.2")).unwrap();
        let ModelConfig::Extended(e) = &c.model else { panic!() };
        assert_eq!(e.params().unwrap().k_n, 20);
    }

    #[test]
    fn custom_model_builds() {
        let text = "[model]\nkind = \"custom\"\nstates = [\"a\", \"b\"]\nn = 10\ntrading_intensity = [1.0, 0.0]\n\
                    transition_rate = [1.0, 1.0]\ntransition_matrix = [[0.5, 0.5], [0.2, 0.8]]\ndemand = [1.0, -1.0]\n";
        let c = parse_config_str(text).unwrap();
        assert_eq!(c.spec().unwrap().m(), 2);
        let bad = text.replace("[0.2, 0.8]", "[0.2, 0.9]");
        assert!(parse_config_str(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..500, gamma in 0.05f64..3.0, frac in 0.01f64..0.99, horizon in 1.0f64..1e4, seeds in 1usize..100) {
            let beta = frac * (-gamma).exp();
            let mut c = parse_config_str(MINIMAL).unwrap();
            c.model = ModelConfig::Pure(PureModel { n: 2 * n, beta, gamma, mu: 1.0, d1: 1.0, lambda: 0.0, initial_opinion: Some(0.0) });
            c.run.horizon = horizon;
            c.converge.seeds = seeds;
            c.outputs.formats = vec![Format::Csv, Format::Svg];
            let back = parse_config_str(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
