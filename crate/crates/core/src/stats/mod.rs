//! Threshold-voltage extraction, Bayesian regression by Hamiltonian Monte
//! Carlo, model scoring and descriptive statistics.

mod describe;
mod hmc;
mod iv;
mod regression;

pub use describe::{describe, kld_uniform, quantile, Description};
pub use hmc::{sample, Chain, HmcConfig, LogDensity, Samples};
pub use iv::{extract_vth, IvCurve, ROOM_TEMPERATURE_VDS};
pub use regression::{
    hmc_fit, loo_score, posterior_summary, synth_correlation, ParamSummary, Posterior,
    PosteriorSummary, RegressionFit, RegressionModel, RegressionSample,
};
