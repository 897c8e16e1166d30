//! Probabilistic Hough line-segment detection.
//!
//! Edge points are visited in seeded random order and vote into a
//! (theta, rho) accumulator. When a bin crosses the threshold the line is
//! refined by a total-least-squares fit to nearby edge points, then walked
//! in both directions tolerating gaps of up to `max_gap` pixels. Segments of
//! at least `min_length` pixels are kept and their points removed.
//!
//! The refinement matters on charge-stability maps: diamond edges are steep
//! in pixel space, where a 1° accumulator bin is a ~10% error in slope.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BinaryEdgeMap;

/// A detected line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// `(V_GS, V_DS)` of the end with the lower `V_DS`.
    pub start: (f64, f64),
    pub end: (f64, f64),
    /// `dV_DS/dV_GS` (V/V).
    pub slope: f64,
    /// Euclidean length in pixels.
    pub length: f64,
    /// Edge pixels supporting the segment.
    pub support: usize,
}

impl Segment {
    /// `V_GS` where the infinite extension of the segment meets `V_DS`.
    pub fn vg_at(&self, vds: f64) -> f64 {
        self.start.0 + (vds - self.start.1) / self.slope
    }

    /// Intersection of the infinite extensions of two segments.
    pub fn intersection(&self, other: &Segment) -> Option<(f64, f64)> {
        let (m1, m2) = (self.slope, other.slope);
        if !(m1.is_finite() && m2.is_finite()) || m1 == m2 {
            return None;
        }
        // vds = m (vg - x0) + y0 for each line.
        let (x1, y1) = self.start;
        let (x2, y2) = other.start;
        let vg = (m1 * x1 - m2 * x2 + y2 - y1) / (m1 - m2);
        Some((vg, m1 * (vg - x1) + y1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughConfig {
    /// Votes a (theta, rho) bin needs before a line is traced.
    pub accumulator_threshold: usize,
    pub min_length: f64,
    pub max_gap: usize,
    pub theta_resolution_deg: f64,
    pub rho_resolution: f64,
    /// Half-width (pixels) of the band used for the final fit and walking;
    /// the first refinement pass uses twice this.
    pub band: f64,
    /// Residual limit (pixels) for points kept in the final line fit.
    pub fit_band: f64,
    pub seed: u64,
}

impl HoughConfig {
    /// Defaults for a map with `rows` bias samples: minimum length 15% of
    /// the bias axis.
    pub fn for_rows(rows: usize) -> Self {
        HoughConfig {
            accumulator_threshold: 10,
            min_length: (0.15 * rows as f64).ceil(),
            max_gap: 3,
            theta_resolution_deg: 1.0,
            rho_resolution: 1.0,
            band: 1.0,
            fit_band: 0.1,
            seed: 0,
        }
    }
}

pub fn hough_segments(
    edges: &BinaryEdgeMap,
    accumulator_threshold: usize,
    min_length: f64,
    max_gap: usize,
) -> Vec<Segment> {
    let cfg = HoughConfig {
        accumulator_threshold,
        min_length,
        max_gap,
        ..HoughConfig::for_rows(edges.height())
    };
    hough_segments_with(edges, &cfg)
}

/// Principal-axis line fit: returns (centroid, unit direction).
fn fit_line(points: &[(f64, f64)]) -> Option<((f64, f64), (f64, f64))> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some(((mx, my), (theta.cos(), theta.sin())))
}

/// Total-least-squares fit that repeatedly drops the worst point until the
/// remainder lie within `band` or three robust deviations, whichever is
/// wider. At least half the points are kept.
fn trimmed_fit(points: &[(f64, f64)], band: f64) -> Option<Line> {
    let mut core = points.to_vec();
    let keep = points.len().div_ceil(2).max(2);
    loop {
        let (centre, dir) = fit_line(&core)?;
        let line = Line { centre, dir };
        let mut resid: Vec<f64> = core.iter().map(|&p| line.distance(p)).collect();
        let (worst, max) = resid
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        let mid = resid.len() / 2;
        let median = *resid.select_nth_unstable_by(mid, f64::total_cmp).1;
        let limit = band.max(3.0 * 1.4826 * median);
        if max <= limit || core.len() <= keep {
            return Some(line);
        }
        core.swap_remove(worst);
    }
}

struct Line {
    centre: (f64, f64),
    dir: (f64, f64),
}

impl Line {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (p.0 - self.centre.0, p.1 - self.centre.1);
        (dx * self.dir.1 - dy * self.dir.0).abs()
    }

    fn project(&self, p: (f64, f64)) -> f64 {
        (p.0 - self.centre.0) * self.dir.0 + (p.1 - self.centre.1) * self.dir.1
    }

    fn point(&self, t: f64) -> (f64, f64) {
        (
            self.centre.0 + t * self.dir.0,
            self.centre.1 + t * self.dir.1,
        )
    }
}

pub fn hough_segments_with(edges: &BinaryEdgeMap, cfg: &HoughConfig) -> Vec<Segment> {
    let (h, w) = (edges.height(), edges.width());
    // Points as (x = column, y = row).
    let mut points: Vec<(usize, usize)> = edges.points().into_iter().map(|(r, c)| (c, r)).collect();
    if points.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    points.shuffle(&mut rng);

    let n_theta = (180.0 / cfg.theta_resolution_deg).round().max(1.0) as usize;
    let thetas: Vec<(f64, f64)> = (0..n_theta)
        .map(|k| {
            let t = (k as f64 * cfg.theta_resolution_deg).to_radians();
            (t.cos(), t.sin())
        })
        .collect();
    let diag = ((w * w + h * h) as f64).sqrt();
    let n_rho = (2.0 * diag / cfg.rho_resolution).ceil() as usize + 1;
    let rho_bin = |x: usize, y: usize, (c, s): (f64, f64)| {
        ((x as f64 * c + y as f64 * s + diag) / cfg.rho_resolution).round() as usize
    };

    let mut acc = vec![0u32; n_theta * n_rho];
    // 0 = no point, 1 = present and unvoted, 2 = voted.
    let mut state = vec![0u8; w * h];
    for &(x, y) in &points {
        state[y * w + x] = 1;
    }
    let mut segments = Vec::new();

    for &(x, y) in &points {
        if state[y * w + x] != 1 {
            continue;
        }
        state[y * w + x] = 2;
        let mut best = (0u32, 0usize);
        for (k, &cs) in thetas.iter().enumerate() {
            let i = k * n_rho + rho_bin(x, y, cs);
            acc[i] += 1;
            if acc[i] > best.0 {
                best = (acc[i], k);
            }
        }
        if (best.0 as usize) < cfg.accumulator_threshold {
            continue;
        }

        // Coarse line from the winning bin, through the seed point.
        let (c, s) = thetas[best.1];
        let mut line = Line {
            centre: (x as f64, y as f64),
            dir: (-s, c),
        };
        // Refine on nearby live points, tightening the band so that curved
        // ends (where edges merge) stop pulling the fit.
        for k in 0..4 {
            let band = if k == 0 { 2.0 * cfg.band } else { cfg.band };
            let near: Vec<(f64, f64)> = live_points_near(edges, &state, &line, band);
            match fit_line(&near) {
                Some((centre, dir)) => line = Line { centre, dir },
                None => break,
            }
        }

        let (t0, t1, members) = walk(edges, &state, &line, edges.position(y, x), cfg);
        let length = t1 - t0;
        if length + 1.0 < cfg.min_length {
            continue;
        }
        // Consume the supporting points and withdraw their votes.
        let mut support = Vec::with_capacity(members.len());
        for &(px, py) in &members {
            let i = py * w + px;
            if state[i] == 2 {
                for (k, &cs) in thetas.iter().enumerate() {
                    acc[k * n_rho + rho_bin(px, py, cs)] -= 1;
                }
            }
            state[i] = 0;
            support.push(edges.position(py, px));
        }
        // Final fit, dropping the worst point until the rest lie within
        // `fit_band`; curved ends (where edges merge) go first.
        let fitted = trimmed_fit(&support, cfg.fit_band).unwrap_or(line);
        let ts: Vec<f64> = support.iter().map(|&p| fitted.project(p)).collect();
        let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (a, b) = (fitted.point(lo), fitted.point(hi));
        if let Some(seg) = to_segment(edges, a, b, support.len()) {
            if seg.length + 1.0 >= cfg.min_length {
                segments.push(seg);
            }
        }
    }
    segments
}

/// Refits `seg` on the sub-pixel edge points within `band` pixels of it
/// for which `keep(V_GS, V_DS)` holds, using the trimmed fit. The extent is
/// that of all nearby points projected onto the new line. Returns `None`
/// when fewer than `min_points` points survive `keep`.
pub fn refit_segment(
    edges: &BinaryEdgeMap,
    seg: &Segment,
    band: f64,
    fit_band: f64,
    min_points: usize,
    keep: impl Fn(f64, f64) -> bool,
) -> Option<Segment> {
    let to_px = |(g, v): (f64, f64)| (edges.vg.position(g), edges.vds.position(v));
    let (a, b) = (to_px(seg.start), to_px(seg.end));
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    if !(len > 0.0) {
        return None;
    }
    let line = Line {
        centre: a,
        dir: ((b.0 - a.0) / len, (b.1 - a.1) / len),
    };
    let near: Vec<(f64, f64)> = points_near(edges, &line, band)
        .into_iter()
        .filter(|&p| {
            let t = line.project(p);
            t >= -1.0 && t <= len + 1.0
        })
        .collect();
    let kept: Vec<(f64, f64)> = near
        .iter()
        .copied()
        .filter(|&(x, y)| keep(edges.vg.at(x), edges.vds.at(y)))
        .collect();
    if kept.len() < min_points.max(2) {
        return None;
    }
    let fitted = trimmed_fit(&kept, fit_band)?;
    let ts = near.iter().map(|&p| fitted.project(p));
    let lo = ts.clone().fold(f64::INFINITY, f64::min);
    let hi = ts.fold(f64::NEG_INFINITY, f64::max);
    to_segment(edges, fitted.point(lo), fitted.point(hi), near.len())
}

fn live_points_near(
    edges: &BinaryEdgeMap,
    state: &[u8],
    line: &Line,
    band: f64,
) -> Vec<(f64, f64)> {
    scan_near(edges, line, band, |i| state[i] != 0)
}

fn points_near(edges: &BinaryEdgeMap, line: &Line, band: f64) -> Vec<(f64, f64)> {
    let w = edges.width();
    scan_near(edges, line, band, |i| edges.get(i / w, i % w))
}

/// Edge positions within `band` of `line` among pixels for which `live`
/// holds (pixel index argument).
fn scan_near(
    edges: &BinaryEdgeMap,
    line: &Line,
    band: f64,
    live: impl Fn(usize) -> bool,
) -> Vec<(f64, f64)> {
    let (w, h) = (edges.width(), edges.height());
    let mut out = Vec::new();
    // Scan along the dominant axis of the line to stay O(length * band).
    let steep = line.dir.1.abs() > line.dir.0.abs();
    let (n_major, n_minor) = if steep { (h, w) } else { (w, h) };
    let reach = (band
        / if steep {
            line.dir.1.abs()
        } else {
            line.dir.0.abs()
        })
    .ceil() as isize
        + 1;
    for major in 0..n_major {
        let m = major as f64;
        let minor = if steep {
            line.centre.0 + (m - line.centre.1) * line.dir.0 / line.dir.1
        } else {
            line.centre.1 + (m - line.centre.0) * line.dir.1 / line.dir.0
        };
        let mc = minor.round() as isize;
        for k in mc - reach..=mc + reach {
            if k < 0 || k as usize >= n_minor {
                continue;
            }
            let (px, py) = if steep {
                (k as usize, major)
            } else {
                (major, k as usize)
            };
            let p = edges.position(py, px);
            if live(py * w + px) && line.distance(p) <= band {
                out.push(p);
            }
        }
    }
    out
}

/// Walks both ways from the seed's projection, one step along the dominant
/// axis at a time. Returns the extent (in line parameter) and the points
/// within the band between the extremes.
fn walk(
    edges: &BinaryEdgeMap,
    state: &[u8],
    line: &Line,
    seed: (f64, f64),
    cfg: &HoughConfig,
) -> (f64, f64, Vec<(usize, usize)>) {
    let (w, h) = (edges.width(), edges.height());
    let steep = line.dir.1.abs() > line.dir.0.abs();
    let step = 1.0
        / if steep {
            line.dir.1.abs()
        } else {
            line.dir.0.abs()
        };
    let t_seed = line.project(seed);
    let hit = |t: f64| -> Vec<(usize, usize)> {
        let (px, py) = line.point(t);
        let mut found = Vec::new();
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        for d in -1isize..=1 {
            let (qx, qy) = if steep { (cx + d, cy) } else { (cx, cy + d) };
            if qx < 0 || qy < 0 || qx as usize >= w || qy as usize >= h {
                continue;
            }
            let (qx, qy) = (qx as usize, qy as usize);
            if state[qy * w + qx] != 0 && line.distance(edges.position(qy, qx)) <= cfg.band {
                found.push((qx, qy));
            }
        }
        found
    };
    let inside = |t: f64| {
        let (px, py) = line.point(t);
        px > -0.5 && py > -0.5 && px < w as f64 - 0.5 && py < h as f64 - 0.5
    };

    let mut members = hit(t_seed);
    let mut ends = [t_seed, t_seed];
    for (e, sign) in [(0usize, -1.0), (1usize, 1.0)] {
        let mut gap = 0;
        let mut t = t_seed;
        loop {
            t += sign * step;
            if !inside(t) {
                break;
            }
            let found = hit(t);
            if found.is_empty() {
                gap += 1;
                if gap > cfg.max_gap {
                    break;
                }
            } else {
                gap = 0;
                ends[e] = t;
                members.extend(found);
            }
        }
    }
    members.sort_unstable();
    members.dedup();
    let (lo, hi) = (ends[0].min(ends[1]), ends[0].max(ends[1]));
    (lo, hi, members)
}

fn to_segment(
    edges: &BinaryEdgeMap,
    a: (f64, f64),
    b: (f64, f64),
    support: usize,
) -> Option<Segment> {
    let length = (a.0 - b.0).hypot(a.1 - b.1);
    let pa = (edges.vg.at(a.0), edges.vds.at(a.1));
    let pb = (edges.vg.at(b.0), edges.vds.at(b.1));
    let dvg = pb.0 - pa.0;
    if dvg.abs() < 1e-12 * edges.vg.span() {
        return None;
    }
    let slope = (pb.1 - pa.1) / dvg;
    if !slope.is_finite() {
        return None;
    }
    let (start, end) = if pa.1 <= pb.1 { (pa, pb) } else { (pb, pa) };
    Some(Segment {
        start,
        end,
        slope,
        length,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Axis;

    fn blank(w: usize, h: usize) -> BinaryEdgeMap {
        BinaryEdgeMap::empty(
            Axis::new(0.0, (w - 1) as f64, w).unwrap(),
            Axis::new(0.0, (h - 1) as f64, h).unwrap(),
        )
    }

    #[test]
    fn empty_map_gives_no_segments() {
        assert!(hough_segments(&blank(32, 32), 10, 5.0, 3).is_empty());
    }

    #[test]
    fn diagonal_line_detected() {
        let mut e = blank(64, 64);
        for i in 0..64 {
            e.set(i, i, true);
        }
        let segs = hough_segments(&e, 10, 10.0, 3);
        assert_eq!(segs.len(), 1, "{segs:?}");
        assert!((segs[0].slope - 1.0).abs() < 0.02);
        assert!(segs[0].length > 60.0);
    }

    #[test]
    fn steep_line_slope_refined_below_bin_width() {
        // Rasterised line with pixel slope 7.3 (about 82 degrees).
        let mut e = blank(64, 128);
        for r in 0..128 {
            let c = (10.0 + r as f64 / 7.3).round() as usize;
            e.set(r, c, true);
        }
        let segs = hough_segments(&e, 10, 19.0, 3);
        assert_eq!(segs.len(), 1);
        assert!(
            (segs[0].slope - 7.3).abs() / 7.3 < 0.01,
            "{}",
            segs[0].slope
        );
    }

    #[test]
    fn short_fragments_rejected() {
        let mut e = blank(64, 64);
        for i in 0..8 {
            e.set(30, 10 + i, true);
        }
        assert!(hough_segments(&e, 3, 19.0, 3).is_empty());
    }

    #[test]
    fn gaps_split_segments() {
        let mut e = blank(100, 10);
        for c in (0..30).chain(40..70) {
            e.set(5, c, true);
        }
        let mut segs = hough_segments(&e, 5, 20.0, 3);
        segs.sort_by(|a, b| a.start.0.total_cmp(&b.start.0));
        assert_eq!(segs.len(), 2, "{segs:?}");
        // Horizontal in pixel space -> zero slope.
        assert!(segs.iter().all(|s| s.slope.abs() < 1e-9));
        let small_gap = {
            let mut e = blank(100, 10);
            for c in (0..30).chain(33..70) {
                e.set(5, c, true);
            }
            hough_segments(&e, 5, 20.0, 3)
        };
        assert_eq!(small_gap.len(), 1);
    }

    #[test]
    fn intersection_of_extensions() {
        let a = Segment {
            start: (0.0, 0.0),
            end: (1.0, 1.0),
            slope: 1.0,
            length: 1.0,
            support: 2,
        };
        let b = Segment {
            start: (2.0, 0.0),
            end: (3.0, -1.0),
            slope: -1.0,
            length: 1.0,
            support: 2,
        };
        let (x, y) = a.intersection(&b).unwrap();
        assert!((x - 1.0).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }
}
