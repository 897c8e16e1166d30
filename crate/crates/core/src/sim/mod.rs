//! Forward synthesis of charge-stability maps from known device parameters.
//!
//! The response model is the constant-interaction single-level picture with
//! antisymmetric bias (`V_D = V_DS/2`, `V_S = -V_DS/2`). For a charge
//! transition at gate voltage `V_t` the level energy (eV) is
//!
//! ```text
//! eps = alpha_g * (V_t - V_GS) - (alpha_d - alpha_s) * V_DS / 2
//! ```
//!
//! and the lead Fermi levels sit at `±V_DS/2`. The rf response of one
//! transition is the thermally smoothed probability that the level lies in
//! the bias window, `f(u)(1 - f(w)) + f(w)(1 - f(u))` with `u`, `w` the level
//! energy relative to source and drain. It is 1 deep inside the window, 0
//! in blockade, and at zero bias reduces to a `cosh^-2` peak of height 1/2.
//! Several transitions combine as `1 - prod(1 - r_k)`.

mod farm;

pub use farm::{synth_cells, synth_farm, FarmSpec, InstanceSetSpec, Normal, SimulatedDevice};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::DeviceClass;
use crate::map::{Axis, ChargeStabilityMap, MapMode};
use crate::ELEMENTARY_CHARGE;

/// Bias sub-steps per row used when integrating the dc current.
const DC_SUBSTEPS: usize = 8;

/// Tolerance on the lever-arm sum bound; parameters sitting exactly on the
/// bound must validate despite rounding.
const BOUND_TOL: f64 = 1e-12;

/// Single-dot parameters recoverable from the first Coulomb oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotParameters {
    /// First-electron loading voltage (V).
    pub v_1e: f64,
    /// Gate lever arm.
    pub alpha_g: f64,
    /// Drain minus source lever arm.
    pub asymmetry: f64,
    /// Second-electron loading voltage (V).
    pub v_2e: Option<f64>,
    /// Charging energy (meV).
    pub charging_energy: Option<f64>,
}

impl DotParameters {
    pub fn new(v_1e: f64, alpha_g: f64, asymmetry: f64) -> Self {
        DotParameters {
            v_1e,
            alpha_g,
            asymmetry,
            v_2e: None,
            charging_energy: None,
        }
    }

    pub fn with_second_electron(mut self, v_2e: f64) -> Self {
        self.v_2e = Some(v_2e);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_lever_arms(self.alpha_g, self.asymmetry)?;
        if !self.v_1e.is_finite() {
            return Err(Error::domain("v_1e must be finite"));
        }
        if let Some(v2) = self.v_2e {
            if !(v2 > self.v_1e) {
                return Err(Error::domain(format!(
                    "v_2e ({v2}) must exceed v_1e ({})",
                    self.v_1e
                )));
            }
        }
        Ok(())
    }
}

fn check_lever_arms(alpha_g: f64, asymmetry: f64) -> Result<()> {
    if !(alpha_g > 0.0 && alpha_g <= 1.0) {
        return Err(Error::domain(format!("alpha_g = {alpha_g} outside (0, 1]")));
    }
    if !(asymmetry.abs() < 1.0) {
        return Err(Error::domain(format!(
            "|asymmetry| = {} not < 1",
            asymmetry.abs()
        )));
    }
    if asymmetry.abs() + alpha_g > 1.0 + BOUND_TOL {
        return Err(Error::domain(format!(
            "|asymmetry| + alpha_g = {} exceeds 1",
            asymmetry.abs() + alpha_g
        )));
    }
    Ok(())
}

/// Diamond edge gradients `dV_DS/dV_GS` for the given lever arms.
///
/// Returns `(m1, m2)` with `m1 > 0` (drain-aligned edge) and `m2 < 0`
/// (source-aligned edge).
pub fn edge_slopes(alpha_g: f64, asymmetry: f64) -> Result<(f64, f64)> {
    check_lever_arms(alpha_g, asymmetry)?;
    let m1 = 2.0 * alpha_g / (1.0 - asymmetry);
    let m2 = -2.0 * alpha_g / (1.0 + asymmetry);
    Ok((m1, m2))
}

/// How the readout is synthesised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Readout {
    #[default]
    Rf,
    Dc,
}

/// Class-specific geometry beyond the primary dot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassShape {
    /// Plain single dot: peaks at `v_1e` and, if set, `v_2e`.
    SingleDot,
    /// Transistor turn-on (logistic in `V_GS`, shifted by `dibl * |V_DS|`)
    /// with weak residual oscillations from the primary dot ladder.
    TurnOn {
        threshold: f64,
        width: f64,
        dibl: f64,
        ripple: f64,
        spacing: f64,
    },
    /// Two dots in series; conduction needs both in their bias windows.
    SeriesDots {
        spacing: f64,
        second: DotParameters,
        second_spacing: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDeviceSpec {
    pub gate_length_nm: u32,
    pub channel_width_nm: u32,
    pub dot: DotParameters,
    /// Thermal broadening `k_B T` in meV.
    pub electron_temperature: f64,
    /// Source tunnel rate (1/s).
    pub tunnel_rate_source: f64,
    /// Drain tunnel rate (1/s).
    pub tunnel_rate_drain: f64,
    pub device_class: DeviceClass,
    pub shape: ClassShape,
    /// Per-sample noise standard deviation for a single average, in rf
    /// response units.
    pub noise_sigma: f64,
    /// Typical excursion of the row-to-row baseline random walk.
    pub drift_amplitude: f64,
    pub n_averages: u32,
    pub readout: Readout,
}

impl SimDeviceSpec {
    /// Noise-free, drift-free rf Good device.
    pub fn good(dot: DotParameters) -> Self {
        SimDeviceSpec {
            gate_length_nm: 28,
            channel_width_nm: 80,
            dot,
            electron_temperature: 0.5,
            tunnel_rate_source: 1.5e10,
            tunnel_rate_drain: 1.5e10,
            device_class: DeviceClass::Good,
            shape: ClassShape::SingleDot,
            noise_sigma: 0.0,
            drift_amplitude: 0.0,
            n_averages: 1,
            readout: Readout::Rf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tunnel_rate_source > 0.0 && self.tunnel_rate_drain > 0.0) {
            return Err(Error::domain("tunnel rates must be strictly positive"));
        }
        if !(self.electron_temperature > 0.0) {
            return Err(Error::domain("electron temperature must be positive"));
        }
        if self.n_averages == 0 {
            return Err(Error::domain("n_averages must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.drift_amplitude >= 0.0) {
            return Err(Error::domain("noise and drift must be non-negative"));
        }
        match self.device_class {
            DeviceClass::Good => self.dot.validate(),
            _ => check_lever_arms(self.dot.alpha_g, self.dot.asymmetry),
        }
    }

    /// Effective noise standard deviation after averaging.
    pub fn effective_noise(&self) -> f64 {
        self.noise_sigma / (self.n_averages as f64).sqrt()
    }

    /// Gross tunnel rate `(1/Γ_S + 1/Γ_D)^-1`.
    pub fn gross_tunnel_rate(&self) -> f64 {
        crate::extract::harmonic_rate(self.tunnel_rate_source, self.tunnel_rate_drain)
    }

    /// Conductance scale (A/V) of a fully open bias window in dc mode:
    /// `|e| Γ` per millivolt of bias.
    pub fn dc_conductance(&self) -> f64 {
        ELEMENTARY_CHARGE * self.gross_tunnel_rate() / 1e-3
    }
}

/// A single charge transition of one dot.
#[derive(Debug, Clone, Copy)]
struct Transition {
    v_t: f64,
    alpha_g: f64,
    asymmetry: f64,
}

#[inline]
fn fermi(x: f64, kt: f64) -> f64 {
    1.0 / (1.0 + (x / kt).exp())
}

impl Transition {
    #[inline]
    fn window(&self, vg: f64, vds: f64, kt: f64) -> f64 {
        let eps = self.alpha_g * (self.v_t - vg) - self.asymmetry * vds / 2.0;
        let fu = fermi(eps - vds / 2.0, kt);
        let fw = fermi(eps + vds / 2.0, kt);
        fu * (1.0 - fw) + fw * (1.0 - fu)
    }
}

fn combined(transitions: &[Transition], vg: f64, vds: f64, kt: f64) -> f64 {
    1.0 - transitions
        .iter()
        .map(|t| 1.0 - t.window(vg, vds, kt))
        .product::<f64>()
}

fn ladder(dot: &DotParameters, spacing: f64, vg: &Axis, vds: &Axis) -> Vec<Transition> {
    // Extend one diamond width past the map so edges entering from the
    // right are still drawn.
    let reach = vds.max.abs().max(vds.min.abs()) / dot.alpha_g;
    let mut out = Vec::new();
    let mut v = dot.v_1e;
    if spacing > 0.0 {
        while v <= vg.max + reach {
            out.push(Transition {
                v_t: v,
                alpha_g: dot.alpha_g,
                asymmetry: dot.asymmetry,
            });
            v += spacing;
        }
    }
    if out.is_empty() {
        out.push(Transition {
            v_t: dot.v_1e,
            alpha_g: dot.alpha_g,
            asymmetry: dot.asymmetry,
        });
    }
    out
}

/// Noise-free rf response model for one device.
struct ResponseModel {
    kt: f64,
    primary: Vec<Transition>,
    shape: ShapeModel,
}

enum ShapeModel {
    Single,
    TurnOn {
        threshold: f64,
        width: f64,
        dibl: f64,
        ripple: f64,
    },
    Series {
        second: Vec<Transition>,
    },
}

impl ResponseModel {
    fn new(spec: &SimDeviceSpec, vg: &Axis, vds: &Axis) -> Self {
        let kt = spec.electron_temperature * 1e-3;
        let dot = &spec.dot;
        let single = |v_t: f64| Transition {
            v_t,
            alpha_g: dot.alpha_g,
            asymmetry: dot.asymmetry,
        };
        match (spec.device_class, spec.shape) {
            (
                _,
                ClassShape::TurnOn {
                    threshold,
                    width,
                    dibl,
                    ripple,
                    spacing,
                },
            ) => ResponseModel {
                kt,
                primary: ladder(dot, spacing, vg, vds),
                shape: ShapeModel::TurnOn {
                    threshold,
                    width,
                    dibl,
                    ripple,
                },
            },
            (
                _,
                ClassShape::SeriesDots {
                    spacing,
                    second,
                    second_spacing,
                },
            ) => ResponseModel {
                kt,
                primary: ladder(dot, spacing, vg, vds),
                shape: ShapeModel::Series {
                    second: ladder(&second, second_spacing, vg, vds),
                },
            },
            (_, ClassShape::SingleDot) => {
                let mut primary = vec![single(dot.v_1e)];
                primary.extend(dot.v_2e.map(single));
                ResponseModel {
                    kt,
                    primary,
                    shape: ShapeModel::Single,
                }
            }
        }
    }

    fn eval(&self, vg: f64, vds: f64) -> f64 {
        let base = combined(&self.primary, vg, vds, self.kt);
        match &self.shape {
            ShapeModel::Single => base,
            ShapeModel::TurnOn {
                threshold,
                width,
                dibl,
                ripple,
            } => {
                let on = 1.0 / (1.0 + (-(vg - threshold + dibl * vds.abs()) / width).exp());
                1.0 - (1.0 - on) * (1.0 - ripple * base)
            }
            ShapeModel::Series { second } => base * combined(second, vg, vds, self.kt),
        }
    }
}

/// Noise-free rf response of `spec` at a single bias point.
pub fn response_at(
    spec: &SimDeviceSpec,
    vg_axis: &Axis,
    vds_axis: &Axis,
    vg: f64,
    vds: f64,
) -> f64 {
    ResponseModel::new(spec, vg_axis, vds_axis).eval(vg, vds)
}

/// Synthesises a charge-stability map for `spec` on the given grid.
///
/// Rf readout yields the response directly. Dc readout yields the drain
/// current `I_D(V_GS, V_DS) = G ∫_0^V_DS r dv`, so that its bias derivative
/// reproduces the rf response shape scaled by
/// [`SimDeviceSpec::dc_conductance`]. Noise and drift for dc maps are
/// expressed in current units of one bias step of open window.
pub fn synth_map(
    spec: &SimDeviceSpec,
    vg: Axis,
    vds: Axis,
    seed: u64,
) -> Result<ChargeStabilityMap> {
    spec.validate()?;
    vg.validate()?;
    vds.validate()?;
    if !vds.is_antisymmetric() {
        return Err(Error::domain(format!(
            "bias axis [{}, {}] must be antisymmetric about zero",
            vds.min, vds.max
        )));
    }
    let model = ResponseModel::new(spec, &vg, &vds);
    let device_id = "sim";

    let (mode, mut values, unit) = match spec.readout {
        Readout::Rf => {
            let map = ChargeStabilityMap::from_fn(device_id, MapMode::Rf, vg, vds, |g, v| {
                model.eval(g, v)
            })?;
            (MapMode::Rf, map.into_values(), 1.0)
        }
        Readout::Dc => {
            let g = spec.dc_conductance();
            (
                MapMode::DcCurrent,
                dc_current(&model, &vg, &vds, g),
                g * vds.step(),
            )
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = spec.effective_noise() * unit;
    if sigma > 0.0 {
        let noise = NormalDist::new(0.0, sigma).expect("finite sigma");
        for v in values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    if spec.drift_amplitude > 0.0 {
        let step = NormalDist::new(0.0, spec.drift_amplitude * unit / (vds.count as f64).sqrt())
            .expect("finite drift");
        let mut baseline = 0.0;
        for row in values.chunks_mut(vg.count) {
            baseline += step.sample(&mut rng);
            row.iter_mut().for_each(|v| *v += baseline);
        }
    }
    ChargeStabilityMap::new(device_id, mode, vg, vds, values)
}

/// Integrates the response along bias on a refined grid.
fn dc_current(model: &ResponseModel, vg: &Axis, vds: &Axis, conductance: f64) -> Vec<f64> {
    let fine_n = (vds.count - 1) * DC_SUBSTEPS + 1;
    let h = vds.step() / DC_SUBSTEPS as f64;
    let zero = vds.position(0.0) * DC_SUBSTEPS as f64;
    let mut out = vec![0.0; vg.count * vds.count];
    let mut cumulative = vec![0.0; fine_n];
    for c in 0..vg.count {
        let g = vg.value(c);
        let mut prev = model.eval(g, vds.min);
        cumulative[0] = 0.0;
        for k in 1..fine_n {
            let r = model.eval(g, vds.min + k as f64 * h);
            cumulative[k] = cumulative[k - 1] + 0.5 * (prev + r) * h;
            prev = r;
        }
        let lo = (zero.floor() as usize).min(fine_n - 2);
        let frac = zero - lo as f64;
        let offset = cumulative[lo] * (1.0 - frac) + cumulative[lo + 1] * frac;
        for r in 0..vds.count {
            out[r * vg.count + c] = conductance * (cumulative[r * DC_SUBSTEPS] - offset);
        }
    }
    out
}

/// Default map grid: 256 gate samples over [0.2, 0.6] V, 128 bias samples
/// over ±20 mV.
pub fn default_axes() -> (Axis, Axis) {
    (
        Axis {
            min: 0.2,
            max: 0.6,
            count: 256,
        },
        Axis {
            min: -0.02,
            max: 0.02,
            count: 128,
        },
    )
}
