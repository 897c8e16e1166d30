//! Four-stage Canny edge detector on a map grid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{Axis, ChargeStabilityMap};

/// Hysteresis thresholds on gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    /// In gradient units of the (smoothed) input.
    Absolute { low: f64, high: f64 },
    /// Percentiles (0–100) of the gradient-magnitude distribution.
    Percentile { low: f64, high: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Percentile {
            low: 70.0,
            high: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEdgeMap {
    pub vg: Axis,
    pub vds: Axis,
    pixels: Vec<bool>,
    /// Sub-pixel displacement `(dx, dy)` of each edge from its pixel centre.
    offsets: Vec<(f64, f64)>,
}

impl BinaryEdgeMap {
    pub fn new(vg: Axis, vds: Axis, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != vg.count * vds.count {
            return Err(Error::InvalidMap("edge map shape mismatch".into()));
        }
        let offsets = vec![(0.0, 0.0); pixels.len()];
        Ok(BinaryEdgeMap {
            vg,
            vds,
            pixels,
            offsets,
        })
    }

    pub fn empty(vg: Axis, vds: Axis) -> Self {
        BinaryEdgeMap {
            vg,
            vds,
            pixels: vec![false; vg.count * vds.count],
            offsets: vec![(0.0, 0.0); vg.count * vds.count],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.vg.count
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.vds.count
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.vg.count + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.pixels[row * self.vg.count + col] = on;
    }

    /// Sub-pixel `(x, y)` = (column, row) location of an edge pixel.
    #[inline]
    pub fn position(&self, row: usize, col: usize) -> (f64, f64) {
        let (dx, dy) = self.offsets[row * self.vg.count + col];
        (col as f64 + dx, row as f64 + dy)
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// `(row, col)` of every edge pixel in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let w = self.vg.count;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }
}

/// Separable Gaussian blur with edge-replicating borders.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for r in 0..height {
        let row = &values[r * width..(r + 1) * width];
        for c in 0..width {
            tmp[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[clamp(c as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as isize + k as isize - radius, height) * width + c])
                .sum();
        }
    }
    out
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gaussian smoothing, Sobel gradients, non-maximum suppression and
/// hysteresis linking with 8-connectivity. Border pixels are never edges.
pub fn canny(
    map: &ChargeStabilityMap,
    gaussian_sigma: f64,
    thresholds: Thresholds,
) -> Result<BinaryEdgeMap> {
    let (low, high) = match thresholds {
        Thresholds::Absolute { low, high } | Thresholds::Percentile { low, high } => (low, high),
    };
    if !(low < high) {
        return Err(Error::domain(format!(
            "Canny low threshold {low} must be below high threshold {high}"
        )));
    }
    let (h, w) = (map.height(), map.width());
    let mut edges = BinaryEdgeMap::empty(map.vg, map.vds);
    if h < 3 || w < 3 {
        return Ok(edges);
    }
    let s = gaussian_blur(map.values(), w, h, gaussian_sigma);
    let at = |r: usize, c: usize| s[r * w + c];

    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let dx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let dy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r * w + c;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }

    let (low, high) = match thresholds {
        Thresholds::Absolute { low, high } => (low, high),
        Thresholds::Percentile { low, high } => {
            let mut sorted: Vec<f64> = (1..h - 1)
                .flat_map(|r| mag[r * w + 1..r * w + w - 1].iter().copied())
                .collect();
            sorted.sort_by(f64::total_cmp);
            (percentile(&sorted, low), percentile(&sorted, high))
        }
    };

    // Non-maximum suppression along the quantised gradient direction, with
    // a parabolic sub-pixel estimate of the ridge position.
    let mut thin = vec![0.0; h * w];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let i = r * w + c;
            let m = mag[i];
            if m <= 0.0 || m < low {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            // Neighbour offset (dc, dr) along the gradient.
            let (dc, dr): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let step = dr * w as isize + dc;
            let a = mag[(i as isize - step) as usize];
            let b = mag[(i as isize + step) as usize];
            if m >= a && m >= b && (m > a || m > b) {
                thin[i] = m;
                let denom = a - 2.0 * m + b;
                let t = if denom < 0.0 {
                    (0.5 * (a - b) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                edges.offsets[i] = (t * dc as f64, t * dr as f64);
            }
        }
    }

    // Hysteresis: grow from strong pixels through weak ones.
    let mut queue = VecDeque::new();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let i = r * w + c;
            if thin[i] > 0.0 && thin[i] >= high && !edges.pixels[i] {
                edges.pixels[i] = true;
                queue.push_back(i);
                while let Some(j) = queue.pop_front() {
                    let (jr, jc) = (j / w, j % w);
                    for nr in jr - 1..=jr + 1 {
                        for nc in jc - 1..=jc + 1 {
                            if nr == 0 || nc == 0 || nr >= h - 1 || nc >= w - 1 {
                                continue;
                            }
                            let k = nr * w + nc;
                            if !edges.pixels[k] && thin[k] > 0.0 && thin[k] >= low {
                                edges.pixels[k] = true;
                                queue.push_back(k);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(edges)
}
