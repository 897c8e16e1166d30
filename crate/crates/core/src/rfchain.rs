//! Reflectometry resonator and readout figures of merit: reflection of the
//! matched tank, SNR against integration time and probe frequency.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::ChargeStabilityMap;

/// Matching coefficient the default resonator is calibrated to.
pub const DEFAULT_MATCHING: f64 = 0.66;

/// Lumped-element reflectometry tank: the coupling capacitor in series with
/// the parallel combination of inductor, remaining capacitance and loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorModel {
    /// L (H).
    pub inductance: f64,
    /// C_C (F).
    pub coupling_capacitance: f64,
    /// On-chip parasitic capacitance (F).
    pub parasitic_chip: f64,
    /// Board parasitic capacitance (F).
    pub parasitic_pcb: f64,
    /// Z_0 (Ω).
    pub line_impedance: f64,
    /// Parallel resistance standing in for the finite internal Q (Ω).
    pub internal_loss_resistance: f64,
}

impl Default for ResonatorModel {
    /// 32.7 nH, 0.8 pF + 0.8 pF + 3.06 pF on a 50 Ω line, with the loss
    /// calibrated to a matching coefficient of 0.66.
    fn default() -> Self {
        let lossless = ResonatorModel {
            inductance: 32.7e-9,
            coupling_capacitance: 0.8e-12,
            parasitic_chip: 0.8e-12,
            parasitic_pcb: 3.06e-12,
            line_impedance: 50.0,
            internal_loss_resistance: f64::INFINITY,
        };
        lossless
            .calibrated(DEFAULT_MATCHING)
            .expect("default resonator calibrates")
    }
}

impl ResonatorModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.inductance,
            self.coupling_capacitance,
            self.parasitic_chip,
            self.parasitic_pcb,
            self.line_impedance,
            self.internal_loss_resistance,
        ];
        if all.iter().any(|v| !(*v > 0.0) || v.is_nan()) {
            return Err(Error::domain("resonator elements must be positive"));
        }
        Ok(())
    }

    pub fn total_capacitance(&self) -> f64 {
        self.coupling_capacitance + self.parasitic_chip + self.parasitic_pcb
    }

    pub fn resonant_frequency(&self) -> f64 {
        resonant_frequency(self.inductance, self.total_capacitance())
            .expect("validated resonator")
    }

    /// Input impedance seen from the line.
    pub fn input_impedance(&self, frequency: f64, device_resistance: f64) -> Complex64 {
        let w = 2.0 * PI * frequency;
        let j = Complex64::i();
        let tank_c = self.parasitic_chip + self.parasitic_pcb;
        // Admittances; an infinite resistance contributes nothing.
        let mut y = 1.0 / (j * w * self.inductance) + j * w * tank_c;
        for r in [self.internal_loss_resistance, device_resistance] {
            if r.is_finite() {
                y += 1.0 / r;
            }
        }
        1.0 / (j * w * self.coupling_capacitance) + 1.0 / y
    }

    /// Reflection coefficient for a device of resistance
    /// `device_resistance` (∞ in blockade).
    pub fn reflection(&self, frequency: f64, device_resistance: f64) -> Complex64 {
        let z = self.input_impedance(frequency, device_resistance);
        (z - self.line_impedance) / (z + self.line_impedance)
    }

    /// Frequency of minimum |Γ| and the value there, located by golden
    /// section within ±10% of the natural frequency.
    pub fn dip(&self, device_resistance: f64) -> (f64, f64) {
        let f0 = self.resonant_frequency();
        let g = |f: f64| self.reflection(f, device_resistance).norm();
        // Coarse scan first so the golden section brackets the true dip.
        let n = 2000;
        let (lo, hi) = (0.9 * f0, 1.1 * f0);
        let step = (hi - lo) / n as f64;
        let k = (0..=n)
            .min_by(|&a, &b| g(lo + a as f64 * step).total_cmp(&g(lo + b as f64 * step)))
            .unwrap_or(0);
        let (mut a, mut b) = (lo + (k as f64 - 1.0) * step, lo + (k as f64 + 1.0) * step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            if g(c) < g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let f = 0.5 * (a + b);
        (f, g(f))
    }

    /// Copy of the model with the internal loss chosen so that the blockaded
    /// reflection dip has depth `(1 - beta) / (1 + beta)`, on the branch
    /// where the transformed tank resistance exceeds the line impedance
    /// (so that `Q_L = Q_i / (1 + beta)`).
    pub fn calibrated(&self, beta: f64) -> Result<ResonatorModel> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::domain(format!("matching coefficient {beta} outside (0, 1)")));
        }
        let mut m = *self;
        m.internal_loss_resistance = 1.0;
        m.validate()?;
        let target = (1.0 - beta) / (1.0 + beta);
        // Critical coupling sits near X_C² / Z_0; below it the dip gets
        // shallower as the loss resistance falls.
        let x_c = 1.0 / (2.0 * PI * m.resonant_frequency() * m.coupling_capacitance);
        let critical = x_c * x_c / m.line_impedance;
        let depth = |r: f64| {
            let mut t = m;
            t.internal_loss_resistance = r;
            t.dip(f64::INFINITY).1
        };
        let (mut lo, mut hi) = (0.01 * critical, critical);
        if !(depth(lo) > target && depth(hi) < target) {
            return Err(Error::domain("could not bracket the matching resistance"));
        }
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if depth(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        m.internal_loss_resistance = (lo * hi).sqrt();
        Ok(m)
    }

    /// Internal quality factor `R / (ω_r L)` of the tank.
    pub fn internal_q(&self) -> f64 {
        self.internal_loss_resistance / (2.0 * PI * self.resonant_frequency() * self.inductance)
    }

    /// Loaded quality factor: dip frequency over the full width at half
    /// maximum of the absorbed power `1 - |Γ|²`.
    pub fn loaded_q(&self, device_resistance: f64) -> Result<f64> {
        let (f_dip, _) = self.dip(device_resistance);
        let n = 20_001;
        let (lo, hi) = (0.8 * f_dip, 1.2 * f_dip);
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let f = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                (f, 1.0 - self.reflection(f, device_resistance).norm_sqr())
            })
            .collect();
        Ok(f_dip / bandwidth_fwhm(&samples)?)
    }
}

/// `1 / (2π √(L C))`.
pub fn resonant_frequency(inductance: f64, capacitance: f64) -> Result<f64> {
    if !(inductance > 0.0 && capacitance > 0.0) || !(inductance * capacitance).is_finite() {
        return Err(Error::domain(format!(
            "L = {inductance} H and C = {capacitance} F must be positive"
        )));
    }
    Ok(1.0 / (2.0 * PI * (inductance * capacitance).sqrt()))
}

/// Integration time at which SNR extrapolates to one, from a least-squares
/// fit of `SNR² = τ / t_min` through the origin.
pub fn fit_t_min(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::domain("fit_t_min needs at least 2 samples"));
    }
    if samples.iter().any(|(t, s)| !(*t > 0.0) || !s.is_finite() || !t.is_finite()) {
        return Err(Error::domain("integration times must be positive and finite"));
    }
    let num: f64 = samples.iter().map(|(t, s)| t * s * s).sum();
    let den: f64 = samples.iter().map(|(t, _)| t * t).sum();
    let k = num / den;
    if !(k > 0.0) {
        return Err(Error::NoSignal("SNR does not grow with integration time".into()));
    }
    Ok(1.0 / k)
}

/// Full width at half maximum of sampled `(f, SNR²)` data, with linear
/// interpolation of both half-maximum crossings.
pub fn bandwidth_fwhm(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::domain("bandwidth needs at least 3 samples"));
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::domain("frequencies must be strictly increasing"));
    }
    let (peak, max) = samples
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, s)| if s.1 > b.1 { (i, s.1) } else { b });
    if !(max > 0.0) {
        return Err(Error::NoSignal("no positive peak".into()));
    }
    let half = 0.5 * max;
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let left = (1..=peak)
        .rev()
        .find(|&i| samples[i - 1].1 < half)
        .map(|i| cross(samples[i - 1], samples[i]));
    let right = (peak..samples.len() - 1)
        .find(|&i| samples[i + 1].1 < half)
        .map(|i| cross(samples[i], samples[i + 1]));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::domain("half maximum is not crossed on both sides of the peak")),
    }
}

/// Rectangular block of map pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn new(rows: Range<usize>, cols: Range<usize>) -> Self {
        Region { rows, cols }
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.cols.is_empty()
    }

    fn overlaps(&self, other: &Region) -> bool {
        self.rows.start < other.rows.end
            && other.rows.start < self.rows.end
            && self.cols.start < other.cols.end
            && other.cols.start < self.cols.end
    }

    fn values<'a>(&'a self, map: &'a ChargeStabilityMap) -> impl Iterator<Item = f64> + 'a {
        self.rows
            .clone()
            .flat_map(move |r| self.cols.clone().map(move |c| map.get(r, c)))
    }
}

/// Mean signal of `peak` above the background mean, in units of the
/// background standard deviation.
pub fn snr_of_map(map: &ChargeStabilityMap, peak: &Region, background: &Region) -> Result<f64> {
    for r in [peak, background] {
        if r.is_empty() {
            return Err(Error::Empty("SNR region".into()));
        }
        if r.rows.end > map.height() || r.cols.end > map.width() {
            return Err(Error::domain("SNR region outside the map"));
        }
    }
    if peak.overlaps(background) {
        return Err(Error::domain("peak and background regions overlap"));
    }
    let bg: Vec<f64> = background.values(map).collect();
    if bg.len() < 2 {
        return Err(Error::domain("background needs at least 2 pixels"));
    }
    let n = bg.len() as f64;
    let mean = bg.iter().sum::<f64>() / n;
    let std = (bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(std > 0.0) {
        return Err(Error::NoSignal("background has zero variance".into()));
    }
    let pk: Vec<f64> = peak.values(map).collect();
    let height = pk.iter().sum::<f64>() / pk.len() as f64 - mean;
    Ok(height / std)
}

/// SNR against integration time (and optionally probe frequency) with the
/// fitted figures of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCurve {
    pub integration_times: Vec<f64>,
    pub snr_values: Vec<f64>,
    pub fitted_t_min: f64,
    pub probe_frequencies: Vec<f64>,
    /// SNR² at each probe frequency.
    pub snr2_values: Vec<f64>,
    pub bandwidth_fwhm: Option<f64>,
}

impl SnrCurve {
    pub fn from_times(times: &[(f64, f64)]) -> Result<Self> {
        Ok(SnrCurve {
            integration_times: times.iter().map(|s| s.0).collect(),
            snr_values: times.iter().map(|s| s.1).collect(),
            fitted_t_min: fit_t_min(times)?,
            probe_frequencies: Vec::new(),
            snr2_values: Vec::new(),
            bandwidth_fwhm: None,
        })
    }

    pub fn with_frequencies(mut self, freqs: &[(f64, f64)]) -> Result<Self> {
        self.bandwidth_fwhm = Some(bandwidth_fwhm(freqs)?);
        self.probe_frequencies = freqs.iter().map(|s| s.0).collect();
        self.snr2_values = freqs.iter().map(|s| s.1).collect();
        Ok(self)
    }

    /// SNR predicted by the fit at integration time `tau`.
    pub fn predicted_snr(&self, tau: f64) -> f64 {
        (tau / self.fitted_t_min).sqrt()
    }
}

/// Lorentzian `(f, SNR²)` samples of the given centre, FWHM and peak.
pub fn lorentzian(center: f64, fwhm: f64, peak: f64, freqs: impl IntoIterator<Item = f64>) -> Vec<(f64, f64)> {
    let g = 0.5 * fwhm;
    freqs
        .into_iter()
        .map(|f| (f, peak * g * g / ((f - center).powi(2) + g * g)))
        .collect()
}
