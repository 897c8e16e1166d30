//! Hamiltonian Monte Carlo with a dense metric and dual-averaging step-size
//! adaptation.
//!
//! Warmup follows the usual windowed scheme: a short initial buffer adapts
//! the step size only, two slow windows estimate the posterior covariance
//! (used as the inverse mass matrix) and a terminal buffer re-tunes the
//! step size for the final metric.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unnormalised log density with gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Starting point for the chains.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    /// Initial step size; refined during warmup when `adapt` is set.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub n_samples: usize,
    pub n_warmup: usize,
    pub seed: u64,
    pub chains: usize,
    /// Dual-averaging target for the mean acceptance probability.
    pub target_accept: f64,
    pub adapt: bool,
    /// Sampling iterations allowed to diverge before the fit fails.
    pub max_divergent_fraction: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 0.1,
            leapfrog_steps: 10,
            n_samples: 2000,
            n_warmup: 1000,
            seed: 0,
            chains: 1,
            target_accept: 0.8,
            adapt: true,
            max_divergent_fraction: 0.01,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::domain("step size must be positive"));
        }
        if self.leapfrog_steps == 0 || self.n_samples == 0 || self.chains == 0 {
            return Err(Error::domain("leapfrog steps, samples and chains must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::domain("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Draws of one chain after warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// `n_samples` points of dimension `dim`.
    pub draws: Vec<Vec<f64>>,
    /// Mean Metropolis acceptance probability over sampling.
    pub acceptance: f64,
    pub divergent: usize,
    pub step_size: f64,
    /// Largest absolute energy error among accepted transitions.
    pub max_energy_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub chains: Vec<Chain>,
}

impl Samples {
    pub fn dim(&self) -> usize {
        self.chains.first().and_then(|c| c.draws.first()).map_or(0, Vec::len)
    }

    /// All draws, chains concatenated.
    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn acceptance(&self) -> f64 {
        self.chains.iter().map(|c| c.acceptance).sum::<f64>() / self.chains.len() as f64
    }

    pub fn divergent(&self) -> usize {
        self.chains.iter().map(|c| c.divergent).sum()
    }

    /// Split-R̂ of each coordinate across chains (each chain halved).
    pub fn split_rhat(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let halves: Vec<Vec<f64>> = self
                    .chains
                    .iter()
                    .flat_map(|c| {
                        let h = c.draws.len() / 2;
                        [
                            c.draws[..h].iter().map(|d| d[k]).collect::<Vec<_>>(),
                            c.draws[h..2 * h].iter().map(|d| d[k]).collect(),
                        ]
                    })
                    .collect();
                rhat(&halves)
            })
            .collect()
    }
}

/// Potential scale reduction of equal-length sequences.
fn rhat(seqs: &[Vec<f64>]) -> f64 {
    let m = seqs.len() as f64;
    let n = seqs.first().map_or(0, Vec::len) as f64;
    if m < 2.0 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Energy error beyond which a trajectory counts as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

struct Metric {
    /// Inverse mass matrix (posterior covariance estimate).
    inv_mass: DMatrix<f64>,
    /// Cholesky factor of the mass matrix, for momentum draws.
    mass_chol: DMatrix<f64>,
}

impl Metric {
    fn identity(d: usize) -> Self {
        Metric {
            inv_mass: DMatrix::identity(d, d),
            mass_chol: DMatrix::identity(d, d),
        }
    }

    fn from_covariance(cov: DMatrix<f64>) -> Option<Self> {
        let mass = cov.clone().try_inverse()?;
        let chol = mass.cholesky()?;
        Some(Metric {
            inv_mass: cov,
            mass_chol: chol.l(),
        })
    }

    fn momentum(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.inv_mass.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mass_chol * z
    }

    fn kinetic(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(&self.inv_mass * p))
    }
}

struct State {
    x: DVector<f64>,
    grad: DVector<f64>,
    logp: f64,
}

impl State {
    fn at(target: &impl LogDensity, x: DVector<f64>) -> Self {
        let mut g = vec![0.0; x.len()];
        let logp = target.log_density(x.as_slice(), &mut g);
        State {
            x,
            grad: DVector::from_vec(g),
            logp,
        }
    }
}

/// One HMC transition. Returns the acceptance probability, the absolute
/// energy error and whether the trajectory diverged.
fn transition(
    target: &impl LogDensity,
    state: &mut State,
    metric: &Metric,
    eps: f64,
    steps: usize,
    rng: &mut impl Rng,
) -> (f64, f64, bool) {
    let mut p = metric.momentum(rng);
    let h0 = -state.logp + metric.kinetic(&p);
    let mut x = state.x.clone();
    let mut grad = state.grad.clone();
    let mut logp = state.logp;
    let mut g = vec![0.0; x.len()];
    for _ in 0..steps {
        p.axpy(0.5 * eps, &grad, 1.0);
        x.axpy(eps, &(&metric.inv_mass * &p), 1.0);
        logp = target.log_density(x.as_slice(), &mut g);
        grad.copy_from_slice(&g);
        p.axpy(0.5 * eps, &grad, 1.0);
        if !logp.is_finite() {
            break;
        }
    }
    let h1 = -logp + metric.kinetic(&p);
    let err = h1 - h0;
    if !err.is_finite() || err > DIVERGENCE_THRESHOLD {
        return (0.0, f64::INFINITY, true);
    }
    let accept = (-err).exp().min(1.0);
    if rng.random::<f64>() < accept {
        *state = State { x, grad, logp };
    }
    (accept, err.abs(), false)
}

/// Nesterov dual averaging of `log(step)` towards a target acceptance.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let w = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let eta = self.t.powf(-KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of one half.
fn initial_step(target: &impl LogDensity, state: &State, metric: &Metric, mut eps: f64, rng: &mut impl Rng) -> f64 {
    let trial = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut s = State {
            x: state.x.clone(),
            grad: state.grad.clone(),
            logp: state.logp,
        };
        let p = metric.momentum(rng);
        let h0 = -s.logp + metric.kinetic(&p);
        let mut p1 = p.clone();
        p1.axpy(0.5 * eps, &s.grad, 1.0);
        s.x.axpy(eps, &(&metric.inv_mass * &p1), 1.0);
        let next = State::at(target, s.x);
        p1.axpy(0.5 * eps, &next.grad, 1.0);
        let h1 = -next.logp + metric.kinetic(&p1);
        let a = (h0 - h1).exp();
        if a.is_finite() {
            a
        } else {
            0.0
        }
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let up = trial(eps, &mut local) > 0.5;
    for _ in 0..50 {
        let next = if up { eps * 2.0 } else { eps / 2.0 };
        let a = trial(next, &mut local);
        if (up && a < 0.5) || (!up && a > 0.5) {
            return if up { eps } else { next };
        }
        eps = next;
    }
    eps
}

/// Welford accumulator for the sample covariance.
struct Covariance {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Covariance {
    fn new(d: usize) -> Self {
        Covariance {
            n: 0.0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    /// Sample covariance shrunk towards a small multiple of the identity.
    fn regularised(&self) -> Option<DMatrix<f64>> {
        if self.n < 3.0 {
            return None;
        }
        let d = self.mean.len();
        let cov = &self.m2 / (self.n - 1.0);
        let w = self.n / (self.n + 5.0);
        Some(cov * w + DMatrix::identity(d, d) * (1e-3 * (1.0 - w)))
    }
}

fn run_chain(target: &impl LogDensity, cfg: &HmcConfig, chain: u64) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain);
    let d = target.dim();
    let mut start = DVector::from_vec(target.initial_point());
    if chain > 0 {
        // Disperse the starting points of additional chains.
        for v in start.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut state = State::at(target, start);
    let mut metric = Metric::identity(d);
    let mut eps = cfg.step_size;

    if cfg.adapt && cfg.n_warmup > 0 {
        let n = cfg.n_warmup;
        let init_end = (n as f64 * 0.15).round() as usize;
        let term_start = n - (n as f64 * 0.1).round() as usize;
        let slow = term_start.saturating_sub(init_end);
        let window_ends = [init_end + slow / 3, term_start];

        eps = initial_step(target, &state, &metric, eps, &mut rng);
        let mut da = DualAveraging::new(eps, cfg.target_accept);
        let mut cov = Covariance::new(d);
        for i in 0..n {
            let (a, _, _) = transition(target, &mut state, &metric, eps, cfg.leapfrog_steps, &mut rng);
            eps = da.update(a);
            if i >= init_end && i < term_start {
                cov.push(&state.x);
                if window_ends.contains(&(i + 1)) {
                    if let Some(m) = cov.regularised().and_then(Metric::from_covariance) {
                        metric = m;
                    }
                    cov = Covariance::new(d);
                    eps = initial_step(target, &state, &metric, eps, &mut rng);
                    da = DualAveraging::new(eps, cfg.target_accept);
                }
            }
        }
        eps = da.adapted();
    } else {
        for _ in 0..cfg.n_warmup {
            transition(target, &mut state, &metric, eps, cfg.leapfrog_steps, &mut rng);
        }
    }

    let mut draws = Vec::with_capacity(cfg.n_samples);
    let (mut acc, mut divergent, mut max_err) = (0.0, 0, 0.0f64);
    for _ in 0..cfg.n_samples {
        // Jitter the step by ±10% to avoid periodic trajectories.
        let e = eps * (0.9 + 0.2 * rng.random::<f64>());
        let (a, err, div) = transition(target, &mut state, &metric, e, cfg.leapfrog_steps, &mut rng);
        acc += a;
        if div {
            divergent += 1;
        } else if a > 0.0 {
            max_err = max_err.max(err);
        }
        draws.push(state.x.as_slice().to_vec());
    }
    Chain {
        draws,
        acceptance: acc / cfg.n_samples as f64,
        divergent,
        step_size: eps,
        max_energy_error: max_err,
    }
}

/// Runs `cfg.chains` independent chains in parallel. Chain `k` uses stream
/// `k` of the seeded generator, so results do not depend on scheduling.
pub fn sample(target: &impl LogDensity, cfg: &HmcConfig) -> Result<Samples> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(Error::domain("target has no dimensions"));
    }
    let chains: Vec<Chain> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|k| run_chain(target, cfg, k))
        .collect();
    let samples = Samples { chains };
    let iterations = cfg.n_samples * cfg.chains;
    let divergent = samples.divergent();
    if divergent as f64 > cfg.max_divergent_fraction * iterations as f64 {
        return Err(Error::Divergent {
            divergent,
            iterations,
            step_size: samples.chains.iter().map(|c| c.step_size).sum::<f64>() / cfg.chains as f64,
            acceptance: samples.acceptance(),
        });
    }
    Ok(samples)
}
