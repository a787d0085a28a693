use crate::error::{Error, Result};
use crate::lux::Equilibrium;

use super::ensemble::CadlagSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    TwoEquilibria,
    SingleStable,
    Oscillatory,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::TwoEquilibria => "two-equilibria",
            Regime::SingleStable => "single-stable",
            Regime::Oscillatory => "oscillatory",
        }
    }
}

/// Heuristic cut-offs for [`classify_regime`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeThresholds {
    /// Fraction of the horizon discarded before any statistic.
    pub burn_in: f64,
    pub min_horizon: f64,
    /// Radius of the neighbourhoods around the outer equilibria.
    pub dwell_radius: f64,
    pub dwell_fraction: f64,
    pub mean_tolerance: f64,
    /// Crossings of `x - F` per unit time separating stable from oscillating prices.
    pub crossing_rate: f64,
    pub gap_cv: f64,
    /// A crossing counts only once `|x - F|` exceeds this band on the other side.
    pub crossing_band: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            burn_in: 0.2,
            min_horizon: 500.0,
            dwell_radius: 1.0,
            dwell_fraction: 0.25,
            mean_tolerance: 0.5,
            crossing_rate: 0.005,
            gap_cv: 0.5,
            crossing_band: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEvidence {
    pub window: (f64, f64),
    pub time_average: f64,
    /// Time fractions within `dwell_radius` of `E+` and `E-`; zero without outer rest points.
    pub dwell_fractions: [f64; 2],
    /// Moves from one outer neighbourhood to the other.
    pub switches: u64,
    pub crossings: u64,
    pub crossing_rate: f64,
    pub gap_cv: Option<f64>,
    /// Twice the mean gap between crossings.
    pub dominant_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub classification: Regime,
    pub evidence: RegimeEvidence,
    /// False when no rule fired and the closest regime by crossing rate was returned.
    pub rule_matched: bool,
}

/// Outer rest points `(E+, E-)` if they are separated from `F` by more than two radii.
fn outer_pair(equilibria: &[Equilibrium], fundamental: f64, radius: f64) -> Option<(f64, f64)> {
    let hi = equilibria.iter().map(|e| e.price).fold(f64::NEG_INFINITY, f64::max);
    let lo = equilibria.iter().map(|e| e.price).fold(f64::INFINITY, f64::min);
    (hi - fundamental > radius && fundamental - lo > radius && hi - lo > 2.0 * radius).then_some((hi, lo))
}

/// Classifies the long-run behaviour of a price path after burn-in.
///
/// Rules are tried in order: two equilibria (enough dwell near both outer rest
/// points, or a switch between them), then oscillatory (frequent, regular crossings
/// of `F`), then single-stable (mean near `F`, rare crossings).
pub fn classify_regime(
    price: &CadlagSeries,
    fundamental: f64,
    equilibria: &[Equilibrium],
    thresholds: &RegimeThresholds,
) -> Result<RegimeReport> {
    let th = thresholds;
    if price.horizon < th.min_horizon {
        return Err(Error::input(format!(
            "regime classification needs a horizon of at least {}, got {}",
            th.min_horizon, price.horizon
        )));
    }
    let from = th.burn_in * price.horizon;
    let span = price.horizon - from;
    let time_average = price.time_average(from);

    let outer = outer_pair(equilibria, fundamental, th.dwell_radius);
    let mut dwell = [0.0; 2];
    let mut switches = 0;
    let mut last_side: Option<usize> = None;
    let mut crossings = 0u64;
    let mut crossing_times = Vec::new();
    let mut sign: Option<bool> = None;
    for (a, b, x) in price.pieces(from) {
        if let Some((hi, lo)) = outer {
            let side = if (x - hi).abs() <= th.dwell_radius {
                Some(0)
            } else if (x - lo).abs() <= th.dwell_radius {
                Some(1)
            } else {
                None
            };
            if let Some(s) = side {
                dwell[s] += b - a;
                if last_side.is_some_and(|l| l != s) {
                    switches += 1;
                }
                last_side = Some(s);
            }
        }
        let d = x - fundamental;
        if d.abs() > th.crossing_band {
            let above = d > 0.0;
            if sign.is_some_and(|s| s != above) {
                crossings += 1;
                crossing_times.push(a);
            }
            sign = Some(above);
        }
    }
    let dwell_fractions = [dwell[0] / span, dwell[1] / span];
    let crossing_rate = crossings as f64 / span;
    let gaps: Vec<f64> = crossing_times.windows(2).map(|w| w[1] - w[0]).collect();
    let (gap_cv, dominant_period) = if gaps.len() >= 2 {
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64;
        (Some(v.sqrt() / m), Some(2.0 * m))
    } else if gaps.len() == 1 {
        (None, Some(2.0 * gaps[0]))
    } else {
        (None, None)
    };

    let two = outer.is_some()
        && ((dwell_fractions[0] > th.dwell_fraction && dwell_fractions[1] > th.dwell_fraction) || switches > 0);
    let oscillatory = crossing_rate >= th.crossing_rate && gap_cv.is_some_and(|cv| cv < th.gap_cv);
    let stable = (time_average - fundamental).abs() < th.mean_tolerance && crossing_rate < th.crossing_rate;
    let (classification, rule_matched) = if two {
        (Regime::TwoEquilibria, true)
    } else if oscillatory {
        (Regime::Oscillatory, true)
    } else if stable {
        (Regime::SingleStable, true)
    } else if crossing_rate >= th.crossing_rate {
        (Regime::Oscillatory, false)
    } else {
        (Regime::SingleStable, false)
    };
    Ok(RegimeReport {
        classification,
        evidence: RegimeEvidence {
            window: (from, price.horizon),
            time_average,
            dwell_fractions,
            switches,
            crossings,
            crossing_rate,
            gap_cv,
            dominant_period,
        },
        rule_matched,
    })
}
