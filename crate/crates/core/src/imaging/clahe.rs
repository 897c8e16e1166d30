//! Contrast-limited adaptive histogram equalisation.
//!
//! Values are rescaled to [0, 1] over the whole map and binned into 256
//! levels. Each tile gets its own clipped-histogram equalisation curve and
//! pixels blend the curves of the four nearest tile centres bilinearly.

use crate::error::{Error, Result};
use crate::map::ChargeStabilityMap;

const BINS: usize = 256;

/// `tile_grid` is (tile rows, tile columns); `clip_limit` is the per-bin
/// count ceiling as a fraction of the tile pixel count.
pub fn clahe(
    map: &ChargeStabilityMap,
    tile_grid: (usize, usize),
    clip_limit: f64,
) -> Result<ChargeStabilityMap> {
    let (ty, tx) = tile_grid;
    if ty == 0 || tx == 0 {
        return Err(Error::domain("CLAHE tile grid must be at least 1x1"));
    }
    if !(clip_limit > 0.0) {
        return Err(Error::domain("CLAHE clip limit must be positive"));
    }
    let (h, w) = (map.height(), map.width());
    let ty = ty.min(h);
    let tx = tx.min(w);
    let (lo, hi) = map.min_max();
    if !(hi > lo) {
        return Ok(map.with_values(vec![0.0; h * w]));
    }
    let scale = 1.0 / (hi - lo);
    let norm: Vec<f64> = map.values().iter().map(|v| (v - lo) * scale).collect();
    let bin = |v: f64| ((v * (BINS - 1) as f64).round() as usize).min(BINS - 1);

    let row_edges: Vec<usize> = (0..=ty).map(|i| i * h / ty).collect();
    let col_edges: Vec<usize> = (0..=tx).map(|j| j * w / tx).collect();

    let mut curves = vec![[0.0f64; BINS]; ty * tx];
    for i in 0..ty {
        for j in 0..tx {
            let mut hist = [0.0f64; BINS];
            for r in row_edges[i]..row_edges[i + 1] {
                for c in col_edges[j]..col_edges[j + 1] {
                    hist[bin(norm[r * w + c])] += 1.0;
                }
            }
            let n = ((row_edges[i + 1] - row_edges[i]) * (col_edges[j + 1] - col_edges[j])) as f64;
            curves[i * tx + j] = equalisation_curve(&mut hist, n, clip_limit * n);
        }
    }

    // Tile centres in pixel coordinates.
    let centre = |edges: &[usize], k: usize| 0.5 * (edges[k] + edges[k + 1]) as f64 - 0.5;
    let locate = |edges: &[usize], count: usize, p: f64| -> (usize, usize, f64) {
        if p <= centre(edges, 0) {
            return (0, 0, 0.0);
        }
        if p >= centre(edges, count - 1) {
            return (count - 1, count - 1, 0.0);
        }
        let mut k = 0;
        while centre(edges, k + 1) < p {
            k += 1;
        }
        let (a, b) = (centre(edges, k), centre(edges, k + 1));
        (k, k + 1, (p - a) / (b - a))
    };

    let mut out = vec![0.0; h * w];
    let col_loc: Vec<_> = (0..w).map(|c| locate(&col_edges, tx, c as f64)).collect();
    for r in 0..h {
        let (i0, i1, fy) = locate(&row_edges, ty, r as f64);
        for c in 0..w {
            let (j0, j1, fx) = col_loc[c];
            let b = bin(norm[r * w + c]);
            let v00 = curves[i0 * tx + j0][b];
            let v01 = curves[i0 * tx + j1][b];
            let v10 = curves[i1 * tx + j0][b];
            let v11 = curves[i1 * tx + j1][b];
            let top = v00 * (1.0 - fx) + v01 * fx;
            let bottom = v10 * (1.0 - fx) + v11 * fx;
            out[r * w + c] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
        }
    }
    Ok(map.with_values(out))
}

/// Clips `hist` at `ceiling`, spreads the excess uniformly and returns the
/// normalised cumulative mapping, anchored so the lowest occupied level
/// maps to 0. A tile with a single occupied level keeps its values.
fn equalisation_curve(hist: &mut [f64; BINS], n: f64, ceiling: f64) -> [f64; BINS] {
    let mut curve = [0.0; BINS];
    let occupied = hist.iter().filter(|&&c| c > 0.0).count();
    if occupied <= 1 {
        for (b, v) in curve.iter_mut().enumerate() {
            *v = b as f64 / (BINS - 1) as f64;
        }
        return curve;
    }
    let first = hist.iter().position(|&c| c > 0.0).unwrap_or(0);
    let ceiling = ceiling.max(1.0);
    let mut excess = 0.0;
    for c in hist.iter_mut() {
        if *c > ceiling {
            excess += *c - ceiling;
            *c = ceiling;
        }
    }
    let share = excess / BINS as f64;
    let mut cdf = 0.0;
    for (b, c) in hist.iter().enumerate() {
        cdf += c + share;
        curve[b] = cdf;
    }
    let base = curve[first];
    let span = n - base;
    for v in curve.iter_mut() {
        *v = if span > 0.0 {
            ((*v - base) / span).max(0.0)
        } else {
            0.0
        };
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Axis, MapMode};

    fn grid(w: usize, h: usize, f: impl FnMut(f64, f64) -> f64) -> ChargeStabilityMap {
        let vg = Axis::new(0.0, (w - 1) as f64, w).unwrap();
        let vds = Axis::new(0.0, (h - 1) as f64, h).unwrap();
        ChargeStabilityMap::from_fn("t", MapMode::Rf, vg, vds, f).unwrap()
    }

    #[test]
    fn constant_map_stays_constant() {
        let m = grid(32, 16, |_, _| 0.7);
        let out = clahe(&m, (8, 8), 0.01).unwrap();
        let first = out.values()[0];
        assert!(out.values().iter().all(|v| *v == first));
    }

    #[test]
    fn two_level_map_is_stretched() {
        // Alternating columns, 0.4 and 0.6 in equal proportion.
        let m = grid(16, 16, |x, _| if (x as usize) % 2 == 0 { 0.4 } else { 0.6 });
        let out = clahe(&m, (1, 1), 1.0).unwrap();
        // Brute-force equalisation of a two-level histogram: low level is the
        // lowest occupied bin (-> 0), high level carries the full mass (-> 1).
        for (i, v) in out.values().iter().enumerate() {
            let expect = if (i % 16) % 2 == 0 { 0.0 } else { 1.0 };
            assert!((v - expect).abs() < 1e-12, "{i}: {v}");
        }
    }

    #[test]
    fn tile_curves_are_monotone() {
        let mut hist = [0.0; BINS];
        for (b, c) in hist.iter_mut().enumerate() {
            *c = ((b * 37) % 13) as f64;
        }
        let n = hist.iter().sum();
        let curve = equalisation_curve(&mut hist, n, 0.01 * n);
        assert!(curve.windows(2).all(|p| p[1] >= p[0]));
        assert!((curve[BINS - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_tile_preserves_row_order() {
        let m = grid(64, 32, |x, y| (x * 0.1).sin() * 0.01 + x * 0.02 + y * 0.001);
        let out = clahe(&m, (1, 1), 0.02).unwrap();
        for row in out.rows() {
            assert!(row.windows(2).all(|p| p[1] >= p[0]));
        }
    }

    #[test]
    fn output_in_unit_interval() {
        let m = grid(40, 24, |x, y| ((x * 7.0 + y * 3.0) % 11.0) - 5.0);
        let out = clahe(&m, (8, 8), 0.01).unwrap();
        assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_configuration_rejected() {
        let m = grid(8, 8, |x, _| x);
        assert!(clahe(&m, (0, 2), 0.01).is_err());
        assert!(clahe(&m, (2, 2), 0.0).is_err());
    }
}
