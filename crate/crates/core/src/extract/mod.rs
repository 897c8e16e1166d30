//! Diamond-edge pair selection, parameter formulas, physicality filtering,
//! device classification and derived energies and rates.

mod classify;
mod pipeline;
mod score;

pub use classify::{classify, classify_with, ClassifierConfig, MapFeatures};
pub use pipeline::{analyze_map, run_stages, DeviceResult, PipelineConfig, Stages};
pub use score::{score_pairs, ScoreComponents, ScoreWeights, ScoredPair};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::DotParameters;
use crate::ELEMENTARY_CHARGE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    /// Clear Coulomb blockade with closing diamonds.
    Good,
    /// No Coulomb blockade.
    Bad,
    /// Several dots in series: non-closing diamonds.
    Multi,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 3] = [DeviceClass::Good, DeviceClass::Bad, DeviceClass::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceClass::Good => "good",
            DeviceClass::Bad => "bad",
            DeviceClass::Multi => "multi",
        }
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for DeviceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Ok(DeviceClass::Good),
            "bad" => Ok(DeviceClass::Bad),
            "multi" => Ok(DeviceClass::Multi),
            other => Err(Error::domain(format!("unknown device class '{other}'"))),
        }
    }
}

/// Lever arms from the two edge gradients (V/V) of a diamond:
/// `alpha_g = (1/|m1| + 1/|m2|)^-1` and `asymmetry = (m1 + m2)/(m1 - m2)`.
pub fn lever_arms_from_slopes(m1: f64, m2: f64) -> Result<(f64, f64)> {
    if !(m1 > 0.0 && m2 < 0.0) {
        return Err(Error::domain(format!(
            "edge slopes must be positive and negative, got ({m1}, {m2})"
        )));
    }
    if m1.is_infinite() && m2.is_infinite() {
        return Err(Error::domain("both edges vertical: lever arm undefined"));
    }
    let alpha = 1.0 / (1.0 / m1.abs() + 1.0 / m2.abs());
    let asym = if m1.is_infinite() {
        1.0
    } else if m2.is_infinite() {
        -1.0
    } else {
        (m1 + m2) / (m1 - m2)
    };
    Ok((alpha, asym))
}

/// Dot parameters of a scored pair; `v_1e` is the crossing gate voltage.
pub fn params_from_pair(pair: &ScoredPair) -> Result<DotParameters> {
    let (alpha, asym) = lever_arms_from_slopes(pair.positive.slope, pair.negative.slope)?;
    Ok(DotParameters::new(pair.crossing.0, alpha, asym))
}

/// Why a parameter set was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterReason {
    LeverArmAboveOne,
    LeverArmBelowPrior,
    AsymmetryOutOfRange,
    LeverArmSumExceeded,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::LeverArmAboveOne => "lever_arm_above_one",
            FilterReason::LeverArmBelowPrior => "lever_arm_below_0.5",
            FilterReason::AsymmetryOutOfRange => "asymmetry_out_of_range",
            FilterReason::LeverArmSumExceeded => "lever_arm_sum_exceeds_one",
        }
    }
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lower bound on the gate lever arm imposed by the device architecture.
pub const MIN_LEVER_ARM: f64 = 0.5;

pub fn physical_filter(params: &DotParameters) -> std::result::Result<(), FilterReason> {
    let (a, d) = (params.alpha_g, params.asymmetry);
    if a.is_nan() || a > 1.0 {
        Err(FilterReason::LeverArmAboveOne)
    } else if a < MIN_LEVER_ARM {
        Err(FilterReason::LeverArmBelowPrior)
    } else if d.is_nan() || d.abs() >= 1.0 {
        Err(FilterReason::AsymmetryOutOfRange)
    } else if d.abs() + a > 1.0 {
        Err(FilterReason::LeverArmSumExceeded)
    } else {
        Ok(())
    }
}

/// `E_C = |e| ΔV_G α_G`, returned in meV.
pub fn charging_energy(delta_vg: f64, alpha_g: f64) -> Result<f64> {
    if !(delta_vg > 0.0) {
        return Err(Error::domain(format!(
            "gate spacing {delta_vg} V must be positive"
        )));
    }
    if !(alpha_g > 0.0 && alpha_g <= 1.0) {
        return Err(Error::domain(format!("lever arm {alpha_g} outside (0, 1]")));
    }
    Ok(delta_vg * alpha_g * 1e3)
}

/// Electrons per second carried by a current `i_d` (A), `Γ = I_D/|e|`.
pub fn gross_tunnel_rate(i_d: f64) -> f64 {
    debug_assert!(i_d >= 0.0, "current must be non-negative");
    i_d / ELEMENTARY_CHARGE
}

/// Series combination of two tunnel rates, `1/Γ = 1/Γ_S + 1/Γ_D`.
pub fn harmonic_rate(gamma_s: f64, gamma_d: f64) -> f64 {
    1.0 / (1.0 / gamma_s + 1.0 / gamma_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Segment;
    use crate::sim::edge_slopes;
    use approx::assert_relative_eq;

    fn pair(m1: f64, m2: f64, crossing: (f64, f64)) -> ScoredPair {
        let seg = |m: f64| Segment {
            start: crossing,
            end: (crossing.0 + 0.01, crossing.1 + 0.01 * m),
            slope: m,
            length: 50.0,
            support: 50,
        };
        ScoredPair::unscored(seg(m1), seg(m2), crossing)
    }

    #[test]
    fn symmetric_pair() {
        let p = params_from_pair(&pair(1.0, -1.0, (0.40, 0.0))).unwrap();
        assert_eq!((p.alpha_g, p.asymmetry, p.v_1e), (0.5, 0.0, 0.40));
    }

    #[test]
    fn farm_scale_pair() {
        let p = params_from_pair(&pair(1.4250, -1.54375, (0.387, 0.0))).unwrap();
        assert_relative_eq!(p.alpha_g, 0.741, epsilon = 1e-12);
        assert_relative_eq!(p.asymmetry, -0.040, epsilon = 1e-12);
    }

    #[test]
    fn slope_identity_on_grid() {
        let mut worst: f64 = 0.0;
        for i in 0..40 {
            for j in 0..40 {
                let a = 0.05 + 0.95 * i as f64 / 39.0;
                let d = (1.0 - a) * (-0.99 + 1.98 * j as f64 / 39.0);
                let (m1, m2) = edge_slopes(a, d).unwrap();
                let (a2, d2) = lever_arms_from_slopes(m1, m2).unwrap();
                worst = worst.max((a2 - a).abs()).max((d2 - d).abs());
            }
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn degenerate_slopes_rejected() {
        assert!(lever_arms_from_slopes(f64::INFINITY, f64::NEG_INFINITY).is_err());
        assert!(lever_arms_from_slopes(1.0, 1.0).is_err());
        assert!(lever_arms_from_slopes(0.0, -1.0).is_err());
    }

    #[test]
    fn filter_cases() {
        let p = |a, d| DotParameters::new(0.4, a, d);
        assert_eq!(
            physical_filter(&p(1.2, 0.0)),
            Err(FilterReason::LeverArmAboveOne)
        );
        assert_eq!(
            physical_filter(&p(0.45, 0.0)),
            Err(FilterReason::LeverArmBelowPrior)
        );
        assert_eq!(
            physical_filter(&p(0.7, 0.4)),
            Err(FilterReason::LeverArmSumExceeded)
        );
        assert_eq!(
            physical_filter(&p(0.6, 1.0)),
            Err(FilterReason::AsymmetryOutOfRange)
        );
        assert_eq!(physical_filter(&p(0.741, -0.04)), Ok(()));
    }

    #[test]
    fn charging_energies() {
        assert_relative_eq!(charging_energy(0.010, 1.0).unwrap(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(charging_energy(0.025, 0.6).unwrap(), 15.0, epsilon = 1e-12);
        assert_relative_eq!(
            charging_energy(0.025, 0.741).unwrap(),
            18.525,
            epsilon = 1e-12
        );
        assert!(charging_energy(0.0, 0.5).is_err());
        assert!(charging_energy(0.01, 1.5).is_err());
    }

    #[test]
    fn tunnel_rates() {
        assert_relative_eq!(gross_tunnel_rate(1.2e-9), 7.4898e9, max_relative = 1e-4);
        assert_relative_eq!(harmonic_rate(2e9, 2e9), 1e9, max_relative = 1e-15);
        assert_eq!(harmonic_rate(f64::INFINITY, 3e9), 3e9);
    }

    #[test]
    fn class_text_round_trip() {
        for c in DeviceClass::ALL {
            assert_eq!(c.to_string().parse::<DeviceClass>().unwrap(), c);
        }
        assert!("weird".parse::<DeviceClass>().is_err());
    }
}
