//! Ensemble statistics, regime detection, rate regression and figure data.

mod ensemble;
mod figures;
mod regime;
mod regression;

pub use ensemble::{
    quantile, record_series, summarize_ensemble, uniform_grid, CadlagSeries, ChannelSummary, EnsembleMember,
    EnsembleSummary, Histogram, DEFAULT_LEVELS,
};
pub use figures::{
    initial_opinions, regime_case, reproduce_figure, FigureData, FigureOptions, Table, FIGURE_IDS,
};
pub use regime::{classify_regime, Regime, RegimeEvidence, RegimeReport, RegimeThresholds};
pub use regression::{convergence_regression, Regression};
