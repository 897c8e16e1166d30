//! Ranking of positive/negative edge pairs.
//!
//! Each pair is scored on five criteria, all oriented so that larger is
//! better: total segment length, closeness of the crossing to zero bias,
//! closeness of the crossing to a zero-bias peak, similarity of the two
//! gradient magnitudes, and how low in gate voltage the crossing sits.
//! Distances are normalised by the relevant axis span. Components are
//! z-standardised across the candidate set before weighting.

use serde::{Deserialize, Serialize};

use crate::imaging::Segment;
use crate::map::Axis;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub length: f64,
    pub vds_proximity: f64,
    pub peak_proximity: f64,
    pub gradient_similarity: f64,
    pub low_vg: f64,
}

impl ScoreComponents {
    fn as_array(&self) -> [f64; 5] {
        [
            self.length,
            self.vds_proximity,
            self.peak_proximity,
            self.gradient_similarity,
            self.low_vg,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        ScoreComponents {
            length: a[0],
            vds_proximity: a[1],
            peak_proximity: a[2],
            gradient_similarity: a[3],
            low_vg: a[4],
        }
    }
}

/// Per-criterion weights; equal by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights(pub ScoreComponents);

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights(ScoreComponents::from_array([1.0; 5]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub positive: Segment,
    pub negative: Segment,
    /// `(V_GS, V_DS)` where the extended segments meet.
    pub crossing: (f64, f64),
    /// Criteria before standardisation.
    pub raw: ScoreComponents,
    /// Standardised criteria.
    pub scores: ScoreComponents,
    pub total_score: f64,
}

impl ScoredPair {
    /// A pair with all scores zero.
    pub fn unscored(positive: Segment, negative: Segment, crossing: (f64, f64)) -> Self {
        ScoredPair {
            positive,
            negative,
            crossing,
            raw: ScoreComponents::default(),
            scores: ScoreComponents::default(),
            total_score: 0.0,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.positive.length + self.negative.length
    }
}

/// All positive × negative combinations whose extensions intersect.
pub fn candidate_pairs(segments: &[Segment]) -> Vec<(Segment, Segment, (f64, f64))> {
    let pos: Vec<&Segment> = segments.iter().filter(|s| s.slope > 0.0).collect();
    let neg: Vec<&Segment> = segments.iter().filter(|s| s.slope < 0.0).collect();
    let mut out = Vec::with_capacity(pos.len() * neg.len());
    for p in &pos {
        for n in &neg {
            if let Some(x) = p.intersection(n) {
                out.push((**p, **n, x));
            }
        }
    }
    out
}

/// Scores and ranks every positive/negative pair in `segments`.
pub fn score_pairs(
    segments: &[Segment],
    peaks: &[f64],
    weights: &ScoreWeights,
    vg: &Axis,
    vds: &Axis,
) -> Vec<ScoredPair> {
    rank(candidate_pairs(segments), peaks, weights, vg, vds)
}

fn raw_components(
    p: &Segment,
    n: &Segment,
    x: (f64, f64),
    peaks: &[f64],
    vg: &Axis,
    vds: &Axis,
) -> ScoreComponents {
    let peak_distance = peaks
        .iter()
        .map(|&v| (x.0 - v).abs())
        .fold(f64::INFINITY, f64::min);
    let (a, b) = (p.slope.abs(), n.slope.abs());
    ScoreComponents {
        length: p.length + n.length,
        vds_proximity: -x.1.abs() / vds.span(),
        peak_proximity: if peak_distance.is_finite() {
            -peak_distance / vg.span()
        } else {
            0.0
        },
        gradient_similarity: -(a - b).abs() / (a + b),
        low_vg: -(x.0 - vg.min) / vg.span(),
    }
}

/// Scores pre-built candidates, standardises, weights and sorts them.
pub(crate) fn rank(
    candidates: Vec<(Segment, Segment, (f64, f64))>,
    peaks: &[f64],
    weights: &ScoreWeights,
    vg: &Axis,
    vds: &Axis,
) -> Vec<ScoredPair> {
    let raws: Vec<[f64; 5]> = candidates
        .iter()
        .map(|(p, n, x)| raw_components(p, n, *x, peaks, vg, vds).as_array())
        .collect();
    let n = raws.len();
    let mut stats = [(0.0, 0.0); 5];
    for (k, st) in stats.iter_mut().enumerate() {
        let mean = raws.iter().map(|r| r[k]).sum::<f64>() / n.max(1) as f64;
        let var = raws.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        *st = (mean, var.sqrt());
    }
    let w = weights.0.as_array();
    let mut out: Vec<ScoredPair> = candidates
        .into_iter()
        .zip(raws)
        .map(|((p, q, x), raw)| {
            let mut z = [0.0; 5];
            for k in 0..5 {
                let (mean, std) = stats[k];
                // Scale-relative guard: identical components contribute 0.
                z[k] = if std > 1e-12 * mean.abs().max(1e-300) {
                    (raw[k] - mean) / std
                } else {
                    0.0
                };
            }
            let total = z.iter().zip(&w).map(|(a, b)| a * b).sum();
            ScoredPair {
                positive: p,
                negative: q,
                crossing: x,
                raw: ScoreComponents::from_array(raw),
                scores: ScoreComponents::from_array(z),
                total_score: total,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.total_score
            .total_cmp(&a.total_score)
            .then(a.crossing.0.total_cmp(&b.crossing.0))
            .then(b.total_length().total_cmp(&a.total_length()))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> (Axis, Axis) {
        (
            Axis::new(0.2, 0.6, 256).unwrap(),
            Axis::new(-0.02, 0.02, 128).unwrap(),
        )
    }

    /// Segment of slope `m` through `(vg, vds)`.
    fn seg(m: f64, through: (f64, f64), length: f64) -> Segment {
        Segment {
            start: through,
            end: (through.0 + 0.005, through.1 + 0.005 * m),
            slope: m,
            length,
            support: length as usize,
        }
    }

    #[test]
    fn single_pair_scores_once() {
        let (vg, vds) = axes();
        let s = [seg(1.5, (0.4, 0.0), 60.0), seg(-1.5, (0.4, 0.0), 60.0)];
        let ranked = score_pairs(&s, &[0.4], &ScoreWeights::default(), &vg, &vds);
        assert_eq!(ranked.len(), 1);
        assert!((ranked[0].crossing.0 - 0.4).abs() < 1e-12);
        assert!(ranked[0].crossing.1.abs() < 1e-12);
        assert_eq!(ranked[0].total_score, 0.0);
    }

    #[test]
    fn zero_bias_crossing_ranks_first() {
        let (vg, vds) = axes();
        // Same slopes, lengths and crossing V_GS; crossings at 0 and 5 mV.
        let a = [seg(1.5, (0.4, 0.0), 60.0), seg(-1.5, (0.4, 0.0), 60.0)];
        let b = [seg(1.5, (0.4, 0.005), 60.0), seg(-1.5, (0.4, 0.005), 60.0)];
        let ranked = super::rank(
            vec![(b[0], b[1], (0.4, 0.005)), (a[0], a[1], (0.4, 0.0))],
            &[],
            &ScoreWeights::default(),
            &vg,
            &vds,
        );
        assert_eq!(ranked[0].crossing.1, 0.0);
    }

    #[test]
    fn lower_gate_crossing_ranks_first() {
        let (vg, vds) = axes();
        let a = [seg(1.5, (0.30, 0.0), 60.0), seg(-1.5, (0.30, 0.0), 60.0)];
        let b = [seg(1.5, (0.45, 0.0), 60.0), seg(-1.5, (0.45, 0.0), 60.0)];
        let ranked = super::rank(
            vec![(b[0], b[1], (0.45, 0.0)), (a[0], a[1], (0.30, 0.0))],
            &[],
            &ScoreWeights::default(),
            &vg,
            &vds,
        );
        assert_eq!(ranked[0].crossing.0, 0.30);
        assert!(ranked[0].total_score > ranked[1].total_score);
    }

    #[test]
    fn exact_ties_prefer_lower_gate_voltage() {
        let (vg, vds) = axes();
        let w = ScoreWeights(ScoreComponents {
            low_vg: 0.0,
            ..ScoreWeights::default().0
        });
        let a = [seg(1.5, (0.30, 0.0), 60.0), seg(-1.5, (0.30, 0.0), 60.0)];
        let b = [seg(1.5, (0.45, 0.0), 60.0), seg(-1.5, (0.45, 0.0), 60.0)];
        let ranked = super::rank(
            vec![(b[0], b[1], (0.45, 0.0)), (a[0], a[1], (0.30, 0.0))],
            &[],
            &w,
            &vg,
            &vds,
        );
        assert_eq!(ranked[0].total_score, ranked[1].total_score);
        assert_eq!(ranked[0].crossing.0, 0.30);
    }

    #[test]
    fn same_sign_segments_make_no_pairs() {
        let (vg, vds) = axes();
        let s = [seg(1.5, (0.4, 0.0), 60.0), seg(2.0, (0.45, 0.0), 60.0)];
        assert!(score_pairs(&s, &[], &ScoreWeights::default(), &vg, &vds).is_empty());
    }

    #[test]
    fn all_pairs_enumerated() {
        let (vg, vds) = axes();
        let s = [
            seg(1.5, (0.4, 0.0), 60.0),
            seg(1.4, (0.42, 0.0), 50.0),
            seg(-1.5, (0.4, 0.0), 60.0),
            seg(-1.6, (0.43, 0.0), 40.0),
            seg(-1.2, (0.47, 0.0), 40.0),
        ];
        let ranked = score_pairs(&s, &[0.4], &ScoreWeights::default(), &vg, &vds);
        assert_eq!(ranked.len(), 6);
        let z_mean: f64 = ranked.iter().map(|p| p.scores.length).sum::<f64>() / 6.0;
        assert!(z_mean.abs() < 1e-12);
        assert!(ranked
            .windows(2)
            .all(|w| w[0].total_score >= w[1].total_score));
    }
}
