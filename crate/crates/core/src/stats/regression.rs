//! Bayesian linear regression `V_1e = alpha * V_th + beta + N(0, sigma)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist, StandardNormal};
use serde::{Deserialize, Serialize};

use super::describe::quantile;
use super::hmc::{sample, HmcConfig, LogDensity, Samples};
use crate::error::{Error, Result};
use crate::sim::Normal;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub alpha: Normal,
    /// Intercept prior (V).
    pub beta: Normal,
    /// Prior on `ln sigma` (sigma in V).
    pub log_sigma: Normal,
    /// Known noise level; when set, only `(alpha, beta)` are sampled.
    pub fixed_sigma: Option<f64>,
}

impl Default for RegressionModel {
    fn default() -> Self {
        RegressionModel {
            alpha: Normal::new(1.0, 1.0),
            beta: Normal::new(0.0, 1.0),
            log_sigma: Normal::new(0.02f64.ln(), 1.0),
            fixed_sigma: None,
        }
    }
}

impl RegressionModel {
    pub fn with_fixed_sigma(mut self, sigma: f64) -> Self {
        self.fixed_sigma = Some(sigma);
        self
    }

    /// Slope-free variant: `alpha` pinned near zero by a very tight prior.
    pub fn intercept_only(mut self) -> Self {
        self.alpha = Normal::new(0.0, 1e-6);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("alpha", self.alpha), ("beta", self.beta), ("log_sigma", self.log_sigma)] {
            if !(p.std > 0.0 && p.mean.is_finite()) {
                return Err(Error::domain(format!("{name} prior needs finite mean and positive std")));
            }
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > 0.0) {
                return Err(Error::domain("fixed sigma must be positive"));
            }
        }
        Ok(())
    }

    /// Log posterior target over `(alpha, beta[, ln sigma])`.
    pub fn posterior<'a>(&'a self, data: &'a [(f64, f64)]) -> Posterior<'a> {
        Posterior { model: self, data }
    }
}

fn normal_logpdf(x: f64, p: Normal) -> (f64, f64) {
    let z = (x - p.mean) / p.std;
    (-0.5 * z * z - p.std.ln() - 0.5 * LN_2PI, -z / p.std)
}

/// Unnormalised log posterior of a [`RegressionModel`] on `(v_th, v_1e)`
/// data.
pub struct Posterior<'a> {
    model: &'a RegressionModel,
    data: &'a [(f64, f64)],
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        if self.model.fixed_sigma.is_some() {
            2
        } else {
            3
        }
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.model;
        let (alpha, beta) = (x[0], x[1]);
        let log_sigma = m.fixed_sigma.map_or_else(|| x[2], f64::ln);
        let inv_var = (-2.0 * log_sigma).exp();
        let (mut lp, ga) = normal_logpdf(alpha, m.alpha);
        let (lb, gb) = normal_logpdf(beta, m.beta);
        lp += lb;
        grad[0] = ga;
        grad[1] = gb;
        let mut ss = 0.0;
        for &(v, y) in self.data {
            let r = y - alpha * v - beta;
            ss += r * r;
            grad[0] += r * v * inv_var;
            grad[1] += r * inv_var;
        }
        let n = self.data.len() as f64;
        lp += -0.5 * ss * inv_var - n * log_sigma - 0.5 * n * LN_2PI;
        if m.fixed_sigma.is_none() {
            let (ls, gs) = normal_logpdf(log_sigma, m.log_sigma);
            lp += ls;
            grad[2] = gs + ss * inv_var - n;
        }
        lp
    }

    /// Ordinary least squares, which is close to the posterior mode.
    fn initial_point(&self) -> Vec<f64> {
        let n = self.data.len() as f64;
        let mx = self.data.iter().map(|d| d.0).sum::<f64>() / n;
        let my = self.data.iter().map(|d| d.1).sum::<f64>() / n;
        let sxx: f64 = self.data.iter().map(|d| (d.0 - mx).powi(2)).sum();
        let sxy: f64 = self.data.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum();
        let alpha = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let beta = my - alpha * mx;
        let mut x = vec![alpha, beta];
        if self.model.fixed_sigma.is_none() {
            let ss: f64 = self.data.iter().map(|d| (d.1 - alpha * d.0 - beta).powi(2)).sum();
            let s = (ss / (n - 2.0).max(1.0)).sqrt().max(1e-6);
            x.push(s.ln());
        }
        x
    }
}

/// One posterior draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model: RegressionModel,
    pub samples: Vec<RegressionSample>,
    pub acceptance: f64,
    pub divergent: usize,
    pub chains: usize,
    /// Split-R̂ per sampled coordinate (`alpha`, `beta`[, `ln sigma`]).
    pub rhat: Vec<f64>,
    pub step_size: f64,
}

/// Samples the regression posterior by HMC.
pub fn hmc_fit(data: &[(f64, f64)], model: &RegressionModel, cfg: &HmcConfig) -> Result<RegressionFit> {
    model.validate()?;
    if data.len() < 3 {
        return Err(Error::domain(format!("regression needs at least 3 points, got {}", data.len())));
    }
    if data.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::domain("data must be finite"));
    }
    let target = model.posterior(data);
    let raw: Samples = sample(&target, cfg)?;
    let samples = raw
        .draws()
        .map(|d| RegressionSample {
            alpha: d[0],
            beta: d[1],
            sigma: model.fixed_sigma.unwrap_or_else(|| d[2].exp()),
        })
        .collect();
    Ok(RegressionFit {
        model: *model,
        samples,
        acceptance: raw.acceptance(),
        divergent: raw.divergent(),
        chains: raw.chains.len(),
        rhat: raw.split_rhat(),
        step_size: raw.chains.iter().map(|c| c.step_size).sum::<f64>() / raw.chains.len() as f64,
    })
}

/// Mean, standard deviation and central interval of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSummary {
    /// `level` is the central mass of the interval, e.g. 0.95.
    pub fn of(values: &[f64], level: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no samples".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - level);
        Ok(ParamSummary {
            mean,
            std: var.sqrt(),
            lower: quantile(&sorted, tail),
            upper: quantile(&sorted, 1.0 - tail),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub alpha: ParamSummary,
    pub beta: ParamSummary,
    pub sigma: ParamSummary,
    pub n_samples: usize,
}

/// Means, standard deviations and central 95% intervals.
pub fn posterior_summary(samples: &[RegressionSample]) -> Result<PosteriorSummary> {
    let col = |f: fn(&RegressionSample) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    Ok(PosteriorSummary {
        alpha: ParamSummary::of(&col(|s| s.alpha), 0.95)?,
        beta: ParamSummary::of(&col(|s| s.beta), 0.95)?,
        sigma: ParamSummary::of(&col(|s| s.sigma), 0.95)?,
        n_samples: samples.len(),
    })
}

impl RegressionFit {
    pub fn summary(&self) -> Result<PosteriorSummary> {
        posterior_summary(&self.samples)
    }

    /// Central `level` interval of the fitted line `alpha v_th + beta`.
    pub fn line_interval(&self, v_th: f64, level: f64) -> Result<ParamSummary> {
        let v: Vec<f64> = self.samples.iter().map(|s| s.alpha * v_th + s.beta).collect();
        ParamSummary::of(&v, level)
    }

    /// Posterior predictive interval for a new `V_1e` at `v_th`: one noisy
    /// draw per posterior sample from a generator seeded with `seed`.
    pub fn predictive_interval(&self, v_th: f64, level: f64, seed: u64) -> Result<ParamSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = self
            .samples
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s.alpha * v_th + s.beta + s.sigma * z
            })
            .collect();
        ParamSummary::of(&v, level)
    }

    /// Posterior of the spread of `V_1e` across a population whose `V_th`
    /// has standard deviation `vth_std`: `sqrt(sigma^2 + (alpha vth_std)^2)`.
    pub fn observed_spread(&self, vth_std: f64) -> Result<ParamSummary> {
        let v: Vec<f64> = self
            .samples
            .iter()
            .map(|s| s.sigma.hypot(s.alpha * vth_std))
            .collect();
        ParamSummary::of(&v, 0.95)
    }
}

/// Log pointwise predictive density: for each observation, the log of the
/// likelihood averaged over posterior samples, summed over observations.
pub fn loo_score(samples: &[RegressionSample], data: &[(f64, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no posterior samples".into()));
    }
    let ln_s = (samples.len() as f64).ln();
    let mut total = 0.0;
    let mut terms = vec![0.0; samples.len()];
    for &(x, y) in data {
        for (t, s) in terms.iter_mut().zip(samples) {
            let z = (y - s.alpha * x - s.beta) / s.sigma;
            *t = -0.5 * z * z - s.sigma.ln() - 0.5 * LN_2PI;
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        total += lse - ln_s;
    }
    Ok(total)
}

/// Synthetic `(v_th, v_1e)` pairs: `v_th ~ N(vth.mean, vth.std)` and
/// `v_1e = alpha v_th + beta + N(0, sigma)`.
pub fn synth_correlation(n: usize, alpha: f64, beta: f64, sigma: f64, vth: Normal, seed: u64) -> Result<Vec<(f64, f64)>> {
    let noise = NormalDist::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let v = vth.sample(&mut rng);
            (v, alpha * v + beta + noise.sample(&mut rng))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> Vec<(f64, f64)> {
        synth_correlation(n, 1.01, 0.21, 0.016, Normal::new(0.173, 0.015), seed).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = data(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for model in [RegressionModel::default(), RegressionModel::default().with_fixed_sigma(0.016)] {
            let post = model.posterior(&d);
            let dim = post.dim();
            for _ in 0..10 {
                let x: Vec<f64> = [
                    1.0 + 0.3 * rng.random::<f64>(),
                    0.2 + 0.05 * rng.random::<f64>(),
                    -4.0 + rng.random::<f64>(),
                ][..dim]
                    .to_vec();
                let mut g = vec![0.0; dim];
                post.log_density(&x, &mut g);
                for k in 0..dim {
                    let h = 1e-6 * x[k].abs().max(1e-3);
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[k] += h;
                    xm[k] -= h;
                    let mut scratch = vec![0.0; dim];
                    let fd = (post.log_density(&xp, &mut scratch) - post.log_density(&xm, &mut scratch)) / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "k={k} fd={fd} g={}", g[k]);
                }
            }
        }
    }

    #[test]
    fn recovers_generators() {
        let d = data(200, 3);
        let fit = hmc_fit(&d, &RegressionModel::default(), &HmcConfig::default()).unwrap();
        let s = fit.summary().unwrap();
        assert!((s.alpha.mean - 1.01).abs() < 2.0 * s.alpha.std, "{s:?}");
        assert!((s.beta.mean - 0.21).abs() < 2.0 * s.beta.std, "{s:?}");
        assert!((s.sigma.mean - 0.016).abs() < 2.0 * s.sigma.std, "{s:?}");
        assert!(fit.acceptance > 0.4 && fit.acceptance < 0.95, "{}", fit.acceptance);
    }

    #[test]
    fn matches_conjugate_posterior_with_known_sigma() {
        use nalgebra::{Matrix2, Vector2};
        let d = data(200, 7);
        let sigma = 0.016;
        let model = RegressionModel::default().with_fixed_sigma(sigma);
        let cfg = HmcConfig {
            chains: 4,
            ..HmcConfig::default()
        };
        let fit = hmc_fit(&d, &model, &cfg).unwrap();

        // Gaussian prior times Gaussian likelihood in closed form.
        let mut prec = Matrix2::new(1.0, 0.0, 0.0, 1.0);
        let mut rhs = Vector2::new(1.0, 0.0);
        for &(x, y) in &d {
            let v = Vector2::new(x, 1.0);
            prec += v * v.transpose() / (sigma * sigma);
            rhs += v * y / (sigma * sigma);
        }
        let cov = prec.try_inverse().unwrap();
        let mean = cov * rhs;

        let n = fit.samples.len() as f64;
        let ma = fit.samples.iter().map(|s| s.alpha).sum::<f64>() / n;
        let mb = fit.samples.iter().map(|s| s.beta).sum::<f64>() / n;
        let (mut caa, mut cab, mut cbb) = (0.0, 0.0, 0.0);
        for s in &fit.samples {
            caa += (s.alpha - ma).powi(2) / n;
            cab += (s.alpha - ma) * (s.beta - mb) / n;
            cbb += (s.beta - mb).powi(2) / n;
        }
        // Monte Carlo error of the mean with a conservative effective
        // sample size of n / 10.
        let ess = n / 10.0;
        assert!((ma - mean[0]).abs() < 4.0 * (cov[(0, 0)] / ess).sqrt(), "{ma} vs {}", mean[0]);
        assert!((mb - mean[1]).abs() < 4.0 * (cov[(1, 1)] / ess).sqrt(), "{mb} vs {}", mean[1]);
        assert_relative_eq!(caa, cov[(0, 0)], max_relative = 0.1);
        assert_relative_eq!(cbb, cov[(1, 1)], max_relative = 0.1);
        let corr = cab / (caa * cbb).sqrt();
        let oracle = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        assert!((corr - oracle).abs() < 0.01, "{corr} vs {oracle}");
        assert!(fit.rhat.iter().all(|r| *r < 1.01), "{:?}", fit.rhat);
    }

    #[test]
    fn posterior_narrows_with_data() {
        // Collinear data with tiny noise: the posterior concentrates.
        let model = RegressionModel::default();
        let cfg = HmcConfig {
            n_samples: 1000,
            n_warmup: 500,
            ..HmcConfig::default()
        };
        let mut last = f64::INFINITY;
        for n in [10, 40, 160] {
            let d: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let v = 0.15 + 0.05 * k as f64 / n as f64;
                    (v, 1.01 * v + 0.21 + 1e-4 * ((k * 7919) % 13) as f64 / 13.0)
                })
                .collect();
            let s = hmc_fit(&d, &model, &cfg).unwrap().summary().unwrap();
            assert!(s.alpha.std < last, "{n}: {s:?}");
            last = s.alpha.std;
        }
    }

    #[test]
    fn constant_samples_have_zero_spread() {
        let s = vec![
            RegressionSample {
                alpha: 1.0,
                beta: 0.2,
                sigma: 0.01
            };
            10
        ];
        let p = posterior_summary(&s).unwrap();
        assert_eq!(p.alpha.std, 0.0);
        assert_eq!(p.beta.lower, 0.2);
        assert!(posterior_summary(&[]).is_err());
    }

    #[test]
    fn standard_normal_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..200_000).map(|_| rng.sample(StandardNormal)).collect();
        let p = ParamSummary::of(&v, 0.95).unwrap();
        assert!((p.lower + 1.96).abs() < 0.03 && (p.upper - 1.96).abs() < 0.03, "{p:?}");
    }

    #[test]
    fn loo_prefers_generator_model() {
        let d = data(100, 5);
        let cfg = HmcConfig {
            n_samples: 1000,
            n_warmup: 500,
            ..HmcConfig::default()
        };
        let full = hmc_fit(&d, &RegressionModel::default(), &cfg).unwrap();
        let flat = hmc_fit(&d, &RegressionModel::default().intercept_only(), &cfg).unwrap();
        let (a, b) = (loo_score(&full.samples, &d).unwrap(), loo_score(&flat.samples, &d).unwrap());
        assert!(a > b, "{a} vs {b}");
        assert_eq!(a, loo_score(&full.samples, &d).unwrap());
    }

    #[test]
    fn loo_of_point_posterior_is_log_likelihood() {
        let s = [RegressionSample {
            alpha: 1.0,
            beta: 0.0,
            sigma: 0.5,
        }];
        let d = [(0.0, 0.0), (1.0, 2.0)];
        let expect = -2.0 * (0.5f64.ln() + 0.5 * LN_2PI) - 0.5 * 4.0;
        assert_relative_eq!(loo_score(&s, &d).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn spread_propagation() {
        let fit = RegressionFit {
            model: RegressionModel::default(),
            samples: vec![RegressionSample {
                alpha: 1.01,
                beta: 0.21,
                sigma: 0.016,
            }],
            acceptance: 1.0,
            divergent: 0,
            chains: 1,
            rhat: vec![],
            step_size: 1.0,
        };
        let s = fit.observed_spread(0.015).unwrap();
        assert_relative_eq!(s.mean, (0.016f64.powi(2) + (1.01f64 * 0.015).powi(2)).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let m = RegressionModel::default();
        assert!(hmc_fit(&[(0.1, 0.2), (0.2, 0.3)], &m, &HmcConfig::default()).is_err());
        let bad = RegressionModel {
            alpha: Normal::new(1.0, 0.0),
            ..m
        };
        assert!(hmc_fit(&data(10, 0), &bad, &HmcConfig::default()).is_err());
    }
}
