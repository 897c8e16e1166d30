//! Room-temperature transfer curves and threshold extraction.

use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal drain-source bias of the room-temperature sweeps (V).
pub const ROOM_TEMPERATURE_VDS: f64 = 0.050;

/// Drain current against gate voltage at fixed bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvCurve {
    pub v_gs: Vec<f64>,
    pub i_d: Vec<f64>,
    pub v_ds: f64,
}

impl IvCurve {
    pub fn new(v_gs: Vec<f64>, i_d: Vec<f64>, v_ds: f64) -> Result<Self> {
        let c = IvCurve { v_gs, i_d, v_ds };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_gs.len() != self.i_d.len() {
            return Err(Error::domain(format!(
                "{} gate samples but {} currents",
                self.v_gs.len(),
                self.i_d.len()
            )));
        }
        if self.v_gs.len() < 3 {
            return Err(Error::domain("an I-V curve needs at least 3 samples"));
        }
        if self.v_gs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("gate voltages must be strictly increasing"));
        }
        if self.i_d.iter().any(|i| !i.is_finite()) {
            return Err(Error::domain("currents must be finite"));
        }
        Ok(())
    }

    /// Transfer curve of a device with threshold `v_th`: a softplus turn-on
    /// of width `smoothing` (V) and slope `g` (A/V) just above threshold,
    /// mobility degradation `1 / (1 + theta u)` for overdrive `u`, and
    /// additive Gaussian current noise.
    pub fn synthetic(
        v_th: f64,
        v_gs: Vec<f64>,
        g: f64,
        smoothing: f64,
        theta: f64,
        noise: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(g > 0.0 && smoothing > 0.0 && theta >= 0.0 && noise >= 0.0) {
            return Err(Error::domain(
                "slope and smoothing must be positive, degradation and noise non-negative",
            ));
        }
        let n = NormalDist::new(0.0, noise).map_err(|e| Error::domain(e.to_string()))?;
        let i_d = v_gs
            .iter()
            .map(|&v| {
                let x = (v - v_th) / smoothing;
                // ln(1 + e^x) without overflow.
                let u = smoothing * (x.max(0.0) + (-x.abs()).exp().ln_1p());
                g * u / (1.0 + theta * u) + n.sample(rng)
            })
            .collect();
        IvCurve::new(v_gs, i_d, ROOM_TEMPERATURE_VDS)
    }
}

/// Threshold voltage by linear extrapolation: the tangent at the point of
/// maximum transconductance is extended to zero current.
pub fn extract_vth(curve: &IvCurve) -> Result<f64> {
    curve.validate()?;
    let (v, i) = (&curve.v_gs, &curve.i_d);
    let n = v.len();
    // Second-order differences on a possibly non-uniform grid, one-sided at
    // the ends.
    let gm = |k: usize| -> f64 {
        if k == 0 {
            (i[1] - i[0]) / (v[1] - v[0])
        } else if k == n - 1 {
            (i[n - 1] - i[n - 2]) / (v[n - 1] - v[n - 2])
        } else {
            let (h0, h1) = (v[k] - v[k - 1], v[k + 1] - v[k]);
            (h0 * h0 * i[k + 1] - h1 * h1 * i[k - 1] + (h1 * h1 - h0 * h0) * i[k])
                / (h0 * h1 * (h0 + h1))
        }
    };
    let (k, g) = (0..n)
        .map(|k| (k, gm(k)))
        .fold((0, f64::NEG_INFINITY), |best, (k, g)| if g > best.1 { (k, g) } else { best });
    let scale = i.iter().fold(0.0f64, |m, x| m.max(x.abs())) / (v[n - 1] - v[0]);
    if !(g > 1e-9 * scale) || scale == 0.0 {
        return Err(Error::NoSignal("no positive transconductance".into()));
    }
    Ok(v[k] - i[k] / g)
}
