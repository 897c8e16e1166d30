//! The charge-stability map: a 2D grid of device response over gate and
//! bias voltage, shared by the simulator, the image pipeline and the file
//! formats.
//!
//! Storage is row-major with one row per `V_DS` sample (rows ordered from
//! `vds.min` to `vds.max`) and one column per `V_GS` sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled voltage axis, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let axis = Axis { min, max, count };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::InvalidMap("axis bounds must be finite".into()));
        }
        if self.count < 2 {
            return Err(Error::InvalidMap(format!(
                "axis needs at least 2 samples, got {}",
                self.count
            )));
        }
        if self.max <= self.min {
            return Err(Error::InvalidMap(format!(
                "axis must be strictly increasing ({} .. {})",
                self.min, self.max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    #[inline]
    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    #[inline]
    pub fn value(&self, index: usize) -> f64 {
        if index + 1 == self.count {
            self.max
        } else {
            self.min + index as f64 * self.step()
        }
    }

    /// Fractional pixel coordinate of `v`.
    #[inline]
    pub fn position(&self, v: f64) -> f64 {
        (v - self.min) / self.step()
    }

    /// Voltage at a fractional pixel coordinate.
    #[inline]
    pub fn at(&self, position: f64) -> f64 {
        self.min + position * self.step()
    }

    pub fn nearest_index(&self, v: f64) -> usize {
        let p = self.position(v).round();
        p.clamp(0.0, (self.count - 1) as f64) as usize
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.value(i))
    }

    /// True when the sample positions are mirror images about zero.
    pub fn is_antisymmetric(&self) -> bool {
        let tol = 1e-9 * self.span().max(f64::MIN_POSITIVE);
        (self.min + self.max).abs() <= tol
    }
}

/// What the map values represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapMode {
    /// Normalised rf reflectometry response (dimensionless).
    Rf,
    /// Drain current in A.
    DcCurrent,
    /// `dI_D/dV_DS` in A/V.
    DcDerivative,
}

impl MapMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MapMode::Rf => "rf",
            MapMode::DcCurrent => "dc_current",
            MapMode::DcDerivative => "dc_derivative",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            MapMode::Rf => "arb",
            MapMode::DcCurrent => "A",
            MapMode::DcDerivative => "A/V",
        }
    }
}

impl fmt::Display for MapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(MapMode::Rf),
            "dc_current" | "dc" => Ok(MapMode::DcCurrent),
            "dc_derivative" => Ok(MapMode::DcDerivative),
            other => Err(Error::InvalidMap(format!("unknown map mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeStabilityMap {
    pub device_id: String,
    pub mode: MapMode,
    pub vg: Axis,
    pub vds: Axis,
    values: Vec<f64>,
}

impl ChargeStabilityMap {
    pub fn new(
        device_id: impl Into<String>,
        mode: MapMode,
        vg: Axis,
        vds: Axis,
        values: Vec<f64>,
    ) -> Result<Self> {
        vg.validate()?;
        vds.validate()?;
        if values.len() != vg.count * vds.count {
            return Err(Error::InvalidMap(format!(
                "expected {}x{} = {} values, got {}",
                vds.count,
                vg.count,
                vg.count * vds.count,
                values.len()
            )));
        }
        Ok(ChargeStabilityMap {
            device_id: device_id.into(),
            mode,
            vg,
            vds,
            values,
        })
    }

    /// Builds a map by evaluating `f(v_gs, v_ds)` at every grid point.
    pub fn from_fn(
        device_id: impl Into<String>,
        mode: MapMode,
        vg: Axis,
        vds: Axis,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(vg.count * vds.count);
        for r in 0..vds.count {
            let v = vds.value(r);
            for c in 0..vg.count {
                values.push(f(vg.value(c), v));
            }
        }
        Self::new(device_id, mode, vg, vds, values)
    }

    /// Same geometry and metadata, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "shape must be preserved");
        ChargeStabilityMap {
            device_id: self.device_id.clone(),
            mode: self.mode,
            vg: self.vg,
            vds: self.vds,
            values,
        }
    }

    /// Number of columns (`V_GS` samples).
    #[inline]
    pub fn width(&self) -> usize {
        self.vg.count
    }

    /// Number of rows (`V_DS` samples).
    #[inline]
    pub fn height(&self) -> usize {
        self.vds.count
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.vg.count + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.vg.count + col] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.vg.count;
        &self.values[row * w..(row + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.vg.count)
    }

    pub fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.values.chunks_mut(self.vg.count)
    }

    /// Row index closest to `V_DS = 0`.
    pub fn zero_bias_row(&self) -> usize {
        self.vds.nearest_index(0.0)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Checks that the bias axis brackets zero, which the zero-bias peak
    /// search relies on.
    pub fn require_zero_bias(&self) -> Result<()> {
        if self.vds.min < 0.0 && self.vds.max > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidMap(format!(
                "V_DS axis [{}, {}] does not span zero",
                self.vds.min, self.vds.max
            )))
        }
    }
}
