//! End-to-end single-map analysis.

use serde::{Deserialize, Serialize};

use super::classify::{closes_at_peak, zero_bias_trace, MapFeatures};
use super::score::{candidate_pairs, rank};
use super::{
    charging_energy, classify_with, lever_arms_from_slopes, physical_filter, ClassifierConfig,
    DeviceClass, FilterReason, ScoreWeights, ScoredPair,
};
use crate::error::Result;
use crate::imaging::{
    canny, clahe, differentiate_dc, find_peaks, hough_segments_with, refit_segment, remove_drift,
    smooth_trace, BinaryEdgeMap, HoughConfig, Segment, Thresholds,
};
use crate::map::{ChargeStabilityMap, MapMode};
use crate::sim::DotParameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub remove_drift: bool,
    pub clahe_tiles: (usize, usize),
    pub clahe_clip: f64,
    pub canny_sigma: f64,
    pub canny_thresholds: Thresholds,
    /// `None` derives the defaults from the map height.
    pub hough: Option<HoughConfig>,
    /// Minimum peak prominence as a fraction of the map's robust maximum.
    pub peak_prominence: f64,
    /// Moving-average radius applied to the zero-bias trace.
    pub peak_smoothing: usize,
    pub weights: ScoreWeights,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            remove_drift: true,
            clahe_tiles: (8, 8),
            clahe_clip: 0.01,
            canny_sigma: 1.5,
            canny_thresholds: Thresholds::default(),
            hough: None,
            peak_prominence: 0.15,
            peak_smoothing: 1,
            weights: ScoreWeights::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceResult {
    pub device_id: String,
    pub class: DeviceClass,
    /// Parameters of the best physically accepted pair, if any.
    pub params: Option<DotParameters>,
    pub best_pair: Option<ScoredPair>,
    pub peaks: Vec<f64>,
    pub segments: usize,
    /// Reasons for rejected candidate pairs, with counts.
    pub filter_reasons: Vec<(FilterReason, usize)>,
    /// Zero-bias peak height over background noise at the best crossing.
    pub snr: Option<f64>,
}

impl DeviceResult {
    pub fn score(&self) -> Option<f64> {
        self.best_pair.as_ref().map(|p| p.total_score)
    }
}

/// Intermediate products, exposed for debugging and tests.
#[derive(Debug, Clone)]
pub struct Stages {
    pub corrected: ChargeStabilityMap,
    pub equalised: ChargeStabilityMap,
    pub edges: BinaryEdgeMap,
    /// Edges of the drift-corrected map before equalisation, used to
    /// measure edge geometry (equalisation is spatially varying and shifts
    /// edges by a fraction of a pixel).
    pub linear_edges: BinaryEdgeMap,
    pub segments: Vec<Segment>,
    pub peaks: Vec<f64>,
    pub accepted: Vec<ScoredPair>,
    pub rejected: Vec<(FilterReason, usize)>,
}

pub fn run_stages(map: &ChargeStabilityMap, cfg: &PipelineConfig) -> Result<Stages> {
    let map = match map.mode {
        MapMode::DcCurrent => differentiate_dc(map)?,
        _ => map.clone(),
    };
    map.require_zero_bias()?;
    let corrected = if cfg.remove_drift {
        remove_drift(&map)
    } else {
        map
    };
    let equalised = clahe(&corrected, cfg.clahe_tiles, cfg.clahe_clip)?;
    let edges = canny(&equalised, cfg.canny_sigma, cfg.canny_thresholds)?;
    let hough = cfg
        .hough
        .unwrap_or_else(|| HoughConfig::for_rows(corrected.height()));
    let segments = hough_segments_with(&edges, &hough);
    let linear_edges = canny(&corrected, cfg.canny_sigma, cfg.canny_thresholds)?;

    let features = MapFeatures::of(&corrected);
    let trace = smooth_trace(&zero_bias_trace(&corrected), cfg.peak_smoothing);
    let peaks: Vec<f64> = if features.max > 0.0 {
        find_peaks(&trace, &corrected.vg, cfg.peak_prominence * features.max)
    } else {
        Vec::new()
    };

    let mut accepted = Vec::new();
    let mut rejected: Vec<(FilterReason, usize)> = Vec::new();
    for (p, n, x) in candidate_pairs(&segments) {
        let (p, n, x) = refine_pair(&linear_edges, p, n, x, cfg.canny_sigma, &hough);
        let Ok((alpha, asym)) = lever_arms_from_slopes(p.slope, n.slope) else {
            continue;
        };
        match physical_filter(&DotParameters::new(x.0, alpha, asym)) {
            Ok(()) => accepted.push((p, n, x)),
            Err(reason) => match rejected.iter_mut().find(|(r, _)| *r == reason) {
                Some((_, c)) => *c += 1,
                None => rejected.push((reason, 1)),
            },
        }
    }
    rejected.sort_by_key(|(r, _)| r.as_str());
    let mut accepted = rank(
        accepted,
        &peaks,
        &cfg.weights,
        &corrected.vg,
        &corrected.vds,
    );
    prefer_outer_edges(&mut accepted, &corrected, cfg);
    promote_first_transition(&mut accepted, &corrected, &peaks, cfg);
    Ok(Stages {
        corrected,
        equalised,
        edges,
        linear_edges,
        segments,
        peaks,
        accepted,
        rejected,
    })
}

/// Minimum apex-cone width, in units of the Canny smoothing length, below
/// which the two edges of a diamond blur into each other and bend inwards.
const APEX_CONE_WIDTH: f64 = 6.0;

/// Refits both edges of a pair on points far enough from their crossing
/// that the cone between them is resolved, then recomputes the crossing.
/// Falls back to the original pair when too few points remain.
fn refine_pair(
    edges: &BinaryEdgeMap,
    p: Segment,
    n: Segment,
    x: (f64, f64),
    sigma: f64,
    hough: &HoughConfig,
) -> (Segment, Segment, (f64, f64)) {
    let (gs, ds) = (edges.vg.step(), edges.vds.step());
    // Cone width in gate pixels per bias row.
    let spread = ds / gs * (1.0 / p.slope.abs() + 1.0 / n.slope.abs());
    let min_dv = APEX_CONE_WIDTH * sigma.max(0.5) / spread * ds;
    let min_points = (hough.min_length / 2.0).ceil() as usize;
    let refit = |s: &Segment| {
        refit_segment(edges, s, hough.band, hough.fit_band, min_points, |_, v| {
            (v - x.1).abs() >= min_dv
        })
        .unwrap_or(*s)
    };
    let (rp, rn) = (refit(&p), refit(&n));
    match rp.intersection(&rn) {
        Some(rx) if rp.slope > 0.0 && rn.slope < 0.0 => (rp, rn, rx),
        _ => (p, n, x),
    }
}

/// Whether both edges of the pair lie on the low-gate side of their
/// crossing, i.e. they bound the conduction cone against the blockade
/// region with one electron fewer.
fn is_outer(pair: &ScoredPair) -> bool {
    let mid = |s: &Segment| 0.5 * (s.start.1 + s.end.1);
    mid(&pair.positive) < pair.crossing.1 && mid(&pair.negative) > pair.crossing.1
}

/// Among pairs that close at zero bias near the same gate voltage, moves
/// the outer pair ahead of higher-ranked inner or mixed ones. The inner
/// edges of a cone face the next transition and, for small charging
/// energies, blur into its edges; the outer edges of the first cone border
/// the empty dot and stay clean.
fn prefer_outer_edges(
    ranked: &mut Vec<ScoredPair>,
    map: &ChargeStabilityMap,
    cfg: &PipelineConfig,
) {
    let tol_vg = cfg.classifier.peak_match_pixels * map.vg.step();
    let vds_limit = cfg.classifier.crossing_vds_fraction * 0.5 * map.vds.span();
    let closing = |p: &ScoredPair| p.crossing.1.abs() <= vds_limit;
    for i in 0..ranked.len() {
        if is_outer(&ranked[i]) || !closing(&ranked[i]) {
            continue;
        }
        let x = ranked[i].crossing.0;
        let j = (i + 1..ranked.len()).find(|&j| {
            let p = &ranked[j];
            is_outer(p) && closing(p) && (p.crossing.0 - x).abs() <= tol_vg
        });
        if let Some(j) = j {
            let pair = ranked.remove(j);
            ranked.insert(i, pair);
        }
    }
}

/// Moves the best-ranked pair of the lowest closing transition to the
/// front: the first electron is by definition the lowest-gate Coulomb peak
/// with a closing diamond, whereas the ranking alone may prefer the second
/// transition's near-identical pair.
fn promote_first_transition(
    ranked: &mut Vec<ScoredPair>,
    map: &ChargeStabilityMap,
    peaks: &[f64],
    cfg: &PipelineConfig,
) {
    let f = MapFeatures::of(map);
    let closing: Vec<usize> = (0..ranked.len())
        .filter(|&i| closes_at_peak(&ranked[i], map, peaks, &f, &cfg.classifier))
        .collect();
    let Some(lowest) = closing
        .iter()
        .map(|&i| ranked[i].crossing.0)
        .min_by(f64::total_cmp)
    else {
        return;
    };
    let tol = cfg.classifier.peak_match_pixels * map.vg.step();
    if let Some(&i) = closing
        .iter()
        .find(|&&i| ranked[i].crossing.0 <= lowest + tol)
    {
        let pair = ranked.remove(i);
        ranked.insert(0, pair);
    }
}

/// Full pipeline: dc differentiation if needed, drift removal, CLAHE,
/// Canny, Hough, peak finding, pair scoring, physicality filtering,
/// ranking and classification.
pub fn analyze_map(map: &ChargeStabilityMap, cfg: &PipelineConfig) -> Result<DeviceResult> {
    let st = run_stages(map, cfg)?;
    let class = classify_with(
        &st.corrected,
        &st.segments,
        &st.peaks,
        &st.accepted,
        &cfg.classifier,
    );
    let best = st.accepted.first().cloned();
    let features = MapFeatures::of(&st.corrected);

    let params = best.as_ref().map(|pair| {
        let (alpha, asym) = lever_arms_from_slopes(pair.positive.slope, pair.negative.slope)
            .expect("accepted pair");
        let mut p = DotParameters::new(pair.crossing.0, alpha, asym);
        if let Some(v2) = second_electron(&st, pair, cfg) {
            p.v_2e = Some(v2);
            p.charging_energy = charging_energy(v2 - p.v_1e, alpha).ok();
        }
        p
    });
    let snr = best.as_ref().and_then(|pair| {
        if features.noise > 0.0 {
            let c = st.corrected.vg.nearest_index(pair.crossing.0);
            let lo = c.saturating_sub(2);
            let hi = (c + 3).min(features.trace.len());
            let h = features.trace[lo..hi]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            Some(h / features.noise)
        } else {
            None
        }
    });

    Ok(DeviceResult {
        device_id: map.device_id.clone(),
        class,
        params,
        best_pair: best,
        peaks: st.peaks,
        segments: st.segments.len(),
        filter_reasons: st.rejected,
        snr,
    })
}

/// The first peak above `v_1e` (by more than the peak-match distance) that
/// also sits under the zero-bias crossing of another accepted pair.
fn second_electron(st: &Stages, best: &ScoredPair, cfg: &PipelineConfig) -> Option<f64> {
    let step = st.corrected.vg.step();
    let tol = cfg.classifier.peak_match_pixels * step;
    let vds_limit = cfg.classifier.crossing_vds_fraction * 0.5 * st.corrected.vds.span();
    let v1 = best.crossing.0;
    let v2 = st.peaks.iter().copied().find(|&v| v > v1 + tol)?;
    let consistent = st.accepted.iter().any(|p| {
        !std::ptr::eq(p, best)
            && p.crossing.1.abs() <= vds_limit
            && (p.crossing.0 - v2).abs() <= tol
    });
    consistent.then_some(v2)
}
