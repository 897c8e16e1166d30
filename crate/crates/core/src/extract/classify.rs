//! Feature-based Good/Bad/Multi classifier.
//!
//! Bad devices conduct over a large share of the zero-bias trace (or not at
//! all). Good devices show an accepted edge pair crossing at zero bias with
//! a strong Coulomb peak beneath it. Anything else with conduction is read
//! as overlapping blockade from several dots: Multi.

use serde::{Deserialize, Serialize};

use super::{DeviceClass, ScoredPair};
use crate::imaging::Segment;
use crate::map::ChargeStabilityMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Share of the zero-bias trace above half the map maximum that marks
    /// background conduction.
    pub on_fraction: f64,
    /// Map maximum below this many noise standard deviations: no signal.
    pub min_signal_to_noise: f64,
    /// Crossing `|V_DS|` limit as a fraction of the bias half-range.
    pub crossing_vds_fraction: f64,
    /// Crossing-to-peak distance limit in gate pixels.
    pub peak_match_pixels: f64,
    /// Minimum zero-bias peak height relative to the map maximum.
    pub min_peak_height: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            on_fraction: 0.25,
            min_signal_to_noise: 8.0,
            crossing_vds_fraction: 0.15,
            peak_match_pixels: 4.0,
            min_peak_height: 0.3,
        }
    }
}

/// Summary features of a drift-corrected map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFeatures {
    /// Robust maximum (99.5th percentile).
    pub max: f64,
    /// Pixel noise estimate from neighbour differences.
    pub noise: f64,
    /// Zero-bias trace (mean of the rows bracketing zero).
    pub trace: Vec<f64>,
    /// Share of the trace above `max / 2`.
    pub on_fraction: f64,
}

impl MapFeatures {
    pub fn of(map: &ChargeStabilityMap) -> Self {
        let mut sorted = map.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = sorted[((sorted.len() - 1) as f64 * 0.995).round() as usize];
        let trace = zero_bias_trace(map);
        let on = trace.iter().filter(|&&v| v > 0.5 * max).count();
        MapFeatures {
            max,
            noise: noise_estimate(map),
            on_fraction: on as f64 / trace.len() as f64,
            trace,
        }
    }

    /// Peak height of the trace near gate index `col`.
    fn height_near(&self, col: usize, radius: usize) -> f64 {
        let lo = col.saturating_sub(radius);
        let hi = (col + radius + 1).min(self.trace.len());
        self.trace[lo..hi]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Mean of the two rows either side of `V_DS = 0` (or the zero row itself
/// when it is on the grid).
pub fn zero_bias_trace(map: &ChargeStabilityMap) -> Vec<f64> {
    let p = map.vds.position(0.0).clamp(0.0, (map.height() - 1) as f64);
    let lo = p.floor() as usize;
    let hi = p.ceil() as usize;
    if lo == hi {
        return map.row(lo).to_vec();
    }
    let f = p - lo as f64;
    map.row(lo)
        .iter()
        .zip(map.row(hi))
        .map(|(a, b)| a * (1.0 - f) + b * f)
        .collect()
}

/// Median-absolute-deviation noise estimate from differences between gate
/// neighbours; insensitive to the smooth signal.
fn noise_estimate(map: &ChargeStabilityMap) -> f64 {
    let mut d: Vec<f64> = map
        .rows()
        .flat_map(|r| r.windows(2).map(|w| (w[1] - w[0]).abs()))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    // |x - y| of two N(0, s^2) draws has median 0.6745 * sqrt(2) * s.
    *m / (0.6745 * std::f64::consts::SQRT_2)
}

/// Whether `pair` crosses near zero bias inside the gate window, above a
/// zero-bias peak of sufficient height.
pub(crate) fn closes_at_peak(
    pair: &ScoredPair,
    map: &ChargeStabilityMap,
    peaks: &[f64],
    f: &MapFeatures,
    cfg: &ClassifierConfig,
) -> bool {
    let vds_limit = cfg.crossing_vds_fraction * 0.5 * map.vds.span();
    let tol = cfg.peak_match_pixels * map.vg.step();
    pair.crossing.1.abs() <= vds_limit
        && map.vg.contains(pair.crossing.0)
        && peaks.iter().any(|&v| {
            (v - pair.crossing.0).abs() <= tol
                && f.height_near(map.vg.nearest_index(v), 1) >= cfg.min_peak_height * f.max
        })
}

pub fn classify(
    map: &ChargeStabilityMap,
    segments: &[Segment],
    peaks: &[f64],
    pairs: &[ScoredPair],
) -> DeviceClass {
    classify_with(map, segments, peaks, pairs, &ClassifierConfig::default())
}

/// `pairs` are the physically accepted pairs in rank order.
pub fn classify_with(
    map: &ChargeStabilityMap,
    _segments: &[Segment],
    peaks: &[f64],
    pairs: &[ScoredPair],
    cfg: &ClassifierConfig,
) -> DeviceClass {
    let f = MapFeatures::of(map);
    if !(f.max > cfg.min_signal_to_noise * f.noise) || f.max <= 0.0 {
        return DeviceClass::Bad;
    }
    if f.on_fraction > cfg.on_fraction {
        return DeviceClass::Bad;
    }
    let closing = pairs.iter().any(|p| closes_at_peak(p, map, peaks, &f, cfg));
    if closing {
        DeviceClass::Good
    } else {
        DeviceClass::Multi
    }
}
