//! Prominence-based 1D peak finding.

use crate::map::Axis;

/// Indices of local maxima whose topographic prominence is at least
/// `min_prominence`, in increasing order. Flat-topped maxima report their
/// middle sample.
pub fn peak_indices(trace: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = trace.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if trace[i] > trace[i - 1] {
            // Extend across a plateau.
            let mut j = i;
            while j + 1 < n && trace[j + 1] == trace[i] {
                j += 1;
            }
            if j + 1 < n && trace[j + 1] < trace[i] {
                let peak = (i + j) / 2;
                if prominence(trace, i, j) >= min_prominence {
                    out.push(peak);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Prominence of the plateau `trace[first..=last]`: height above the higher
/// of the two minima reached before meeting higher ground on either side.
fn prominence(trace: &[f64], first: usize, last: usize) -> f64 {
    let top = trace[first];
    let mut left_min = top;
    for k in (0..first).rev() {
        if trace[k] > top {
            break;
        }
        left_min = left_min.min(trace[k]);
    }
    let mut right_min = top;
    for &v in &trace[last + 1..] {
        if v > top {
            break;
        }
        right_min = right_min.min(v);
    }
    top - left_min.max(right_min)
}

/// `V_GS` positions of prominent peaks of a zero-bias trace.
/// Peak positions in axis units, refined to sub-sample precision by a
/// parabola through each maximum and its neighbours.
pub fn find_peaks(trace: &[f64], axis: &Axis, min_prominence: f64) -> Vec<f64> {
    peak_indices(trace, min_prominence)
        .into_iter()
        .map(|i| axis.at(refine_peak(trace, i)))
        .collect()
}

/// Fractional index of the vertex of the parabola through samples
/// `i - 1, i, i + 1`; `i` itself at the ends or on flat tops.
pub fn refine_peak(trace: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= trace.len() {
        return i as f64;
    }
    let (a, m, b) = (trace[i - 1], trace[i], trace[i + 1]);
    let denom = a - 2.0 * m + b;
    if denom < 0.0 {
        i as f64 + (0.5 * (a - b) / denom).clamp(-0.5, 0.5)
    } else {
        i as f64
    }
}

/// Moving average over `2 * radius + 1` samples, shrinking at the ends.
pub fn smooth_trace(trace: &[f64], radius: usize) -> Vec<f64> {
    let n = trace.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            trace[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_axes, response_at, DotParameters, SimDeviceSpec};

    #[test]
    fn flat_trace_has_no_peaks() {
        assert!(peak_indices(&[0.3; 50], 0.01).is_empty());
        assert!(peak_indices(&[], 0.01).is_empty());
    }

    #[test]
    fn two_coulomb_peaks_found() {
        let (vg, vds) = default_axes();
        let dot = DotParameters::new(0.387, 0.741, -0.04).with_second_electron(0.412);
        let spec = SimDeviceSpec::good(dot);
        let trace: Vec<f64> = vg
            .values()
            .map(|g| response_at(&spec, &vg, &vds, g, 0.0))
            .collect();
        let peaks = find_peaks(&trace, &vg, 0.1);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        assert!((peaks[0] - 0.387).abs() <= vg.step());
        assert!((peaks[1] - 0.412).abs() <= vg.step());
    }

    #[test]
    fn sub_prominence_ripple_ignored() {
        let p = 0.2;
        let trace: Vec<f64> = (0..200)
            .map(|i| {
                let x = i as f64;
                // Ripple peak-to-trough of p / 2.
                let ripple = 0.25 * p * (x * 0.7).sin();
                (-(x - 100.0).powi(2) / 50.0).exp() + ripple
            })
            .collect();
        let peaks = peak_indices(&trace, p);
        assert_eq!(peaks.len(), 1, "{peaks:?}");
        assert!((peaks[0] as isize - 100).abs() <= 1);
    }

    #[test]
    fn plateau_reports_middle() {
        let t = [0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(peak_indices(&t, 0.5), vec![2]);
    }

    #[test]
    fn prominence_uses_higher_base() {
        // Small bump on the shoulder of a tall peak.
        let t = [0.0, 5.0, 1.0, 1.5, 1.2, 0.0];
        // Bump prominence: 1.5 - max(1.0, 0.0) = 0.5.
        assert_eq!(peak_indices(&t, 0.6), vec![1]);
        assert_eq!(peak_indices(&t, 0.4), vec![1, 3]);
    }
}
