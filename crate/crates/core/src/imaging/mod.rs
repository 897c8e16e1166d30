//! Image-processing chain that turns a raw map into line segments and
//! zero-bias peak positions: drift removal, CLAHE, Canny, probabilistic
//! Hough and 1D peak finding.

mod canny;
mod clahe;
mod hough;
mod peaks;

pub use canny::{canny, gaussian_blur, BinaryEdgeMap, Thresholds};
pub use clahe::clahe;
pub use hough::{hough_segments, hough_segments_with, refit_segment, HoughConfig, Segment};
pub use peaks::{find_peaks, peak_indices, refine_peak, smooth_trace};

use crate::error::{Error, Result};
use crate::map::{ChargeStabilityMap, MapMode};

/// Samples per row used as the drift reference.
pub const DRIFT_WINDOW: usize = 100;

/// Central-difference `dI/dV_DS` of a dc current map.
///
/// Interior rows use `(I[r+1] - I[r-1]) / 2h`; the first and last rows use
/// one-sided differences, which are exact for the same linear inputs.
pub fn differentiate_dc(map: &ChargeStabilityMap) -> Result<ChargeStabilityMap> {
    if map.mode != MapMode::DcCurrent {
        return Err(Error::ModeMismatch {
            expected: MapMode::DcCurrent,
            found: map.mode,
        });
    }
    let (h, w) = (map.height(), map.width());
    if h < 3 {
        return Err(Error::InvalidMap(format!(
            "differentiation needs at least 3 bias rows, got {h}"
        )));
    }
    let step = map.vds.step();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let (lo, hi, span) = match r {
            0 => (0, 1, step),
            _ if r == h - 1 => (h - 2, h - 1, step),
            _ => (r - 1, r + 1, 2.0 * step),
        };
        let (a, b) = (map.row(lo), map.row(hi));
        for c in 0..w {
            out[r * w + c] = (b[c] - a[c]) / span;
        }
    }
    let mut d = map.with_values(out);
    d.mode = MapMode::DcDerivative;
    Ok(d)
}

/// Subtracts from each row (fixed `V_DS`) the mean of its first
/// `min(100, width)` samples.
pub fn remove_drift(map: &ChargeStabilityMap) -> ChargeStabilityMap {
    let mut out = map.clone();
    let n = DRIFT_WINDOW.min(map.width());
    for row in out.rows_mut() {
        let mean = row[..n].iter().sum::<f64>() / n as f64;
        if mean != 0.0 {
            row.iter_mut().for_each(|v| *v -= mean);
        }
    }
    out
}
