//! Population-level synthesis: one labelled map per farm cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synth_map, ClassShape, DotParameters, Readout, SimDeviceSpec};
use crate::error::{Error, Result};
use crate::extract::DeviceClass;
use crate::layout::{default_sets, FarmLayout};
use crate::map::{Axis, ChargeStabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normal {
    pub mean: f64,
    pub std: f64,
}

impl Normal {
    pub const fn new(mean: f64, std: f64) -> Self {
        Normal { mean, std }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        NormalDist::new(self.mean, self.std)
            .expect("finite normal")
            .sample(rng)
    }
}

/// Generator distribution for one instance set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSetSpec {
    pub set_id: u32,
    pub gate_length_nm: u32,
    pub channel_width_nm: u32,
    /// Relative frequencies of Good, Bad, Multi.
    pub class_mix: [f64; 3],
    pub v_1e: Normal,
    pub alpha_g: Normal,
    pub asymmetry: Normal,
    /// `V_2e - V_1e`.
    pub spacing: Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmSpec {
    pub sets: Vec<InstanceSetSpec>,
    pub vg: Axis,
    pub vds: Axis,
    pub electron_temperature: f64,
    /// log10 of the individual tunnel rates.
    pub log10_tunnel_rate: Normal,
    pub noise_sigma: f64,
    pub drift_amplitude: f64,
    pub n_averages: u32,
    pub readout: Readout,
}

/// Shortest-channel first-electron voltage; longer gates add a
/// phenomenological offset standing in for reduced barrier lowering.
fn v_1e_mean(gate_length_nm: u32) -> f64 {
    match gate_length_nm {
        28 => 0.387,
        40 => 0.400,
        60 => 0.412,
        _ => 0.422,
    }
}

fn default_mix(gate_length_nm: u32) -> [f64; 3] {
    match gate_length_nm {
        28 => [0.55, 0.40, 0.05],
        40 => [0.40, 0.15, 0.45],
        60 => [0.05, 0.05, 0.90],
        _ => [0.00, 0.02, 0.98],
    }
}

impl FarmSpec {
    /// Population statistics of the shortest-gate devices applied to every
    /// set, with a class mix that favours single dots at short gates.
    pub fn default_farm() -> Self {
        let (vg, vds) = super::default_axes();
        let sets = default_sets()
            .into_iter()
            .map(|s| InstanceSetSpec {
                set_id: s.set_id,
                gate_length_nm: s.gate_length_nm,
                channel_width_nm: s.channel_width_nm,
                class_mix: default_mix(s.gate_length_nm),
                v_1e: Normal::new(v_1e_mean(s.gate_length_nm), 0.022),
                alpha_g: Normal::new(0.741, 0.082),
                asymmetry: Normal::new(-0.040, 0.150),
                spacing: Normal::new(0.025, 0.004),
            })
            .collect();
        FarmSpec {
            sets,
            vg,
            vds,
            electron_temperature: 0.5,
            log10_tunnel_rate: Normal::new(1.5e10f64.log10(), 0.2),
            noise_sigma: 0.025,
            drift_amplitude: 0.05,
            n_averages: 1,
            readout: Readout::Rf,
        }
    }

    pub fn with_class_mix(mut self, mix: [f64; 3]) -> Self {
        for s in &mut self.sets {
            s.class_mix = mix;
        }
        self
    }

    pub fn noise_free(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.drift_amplitude = 0.0;
        self
    }

    fn set(&self, set_id: u32) -> Result<&InstanceSetSpec> {
        self.sets
            .iter()
            .find(|s| s.set_id == set_id)
            .ok_or(Error::UnknownSet(set_id))
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    pub device_id: String,
    pub set_id: u32,
    pub row: u32,
    pub col: u32,
    pub class: DeviceClass,
    /// Ground-truth parameters; only meaningful for Good devices.
    pub truth: Option<DotParameters>,
    pub spec: SimDeviceSpec,
    pub map: ChargeStabilityMap,
}

/// Draws physical Good-device lever arms: `alpha_g >= 0.5` and
/// `|asymmetry| + alpha_g <= 1`, by rejection.
pub(crate) fn sample_lever_arms(set: &InstanceSetSpec, rng: &mut impl Rng) -> (f64, f64) {
    loop {
        let a = set.alpha_g.sample(rng);
        let d = set.asymmetry.sample(rng);
        if a >= 0.5 && d.abs() < 1.0 && a + d.abs() <= 1.0 {
            return (a, d);
        }
    }
}

fn sample_class(mix: &[f64; 3], rng: &mut impl Rng) -> DeviceClass {
    let total: f64 = mix.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in mix.iter().enumerate() {
        if u < *w {
            return DeviceClass::ALL[i];
        }
        u -= w;
    }
    DeviceClass::ALL[mix.iter().rposition(|w| *w > 0.0).unwrap_or(0)]
}

/// Draws the device spec and ground truth for one cell.
pub(crate) fn sample_device(
    farm: &FarmSpec,
    set: &InstanceSetSpec,
    rng: &mut impl Rng,
) -> (DeviceClass, Option<DotParameters>, SimDeviceSpec) {
    let class = sample_class(&set.class_mix, rng);
    let v_1e = set.v_1e.sample(rng);
    let (alpha_g, asymmetry) = sample_lever_arms(set, rng);
    let spacing = set.spacing.sample(rng).max(0.01);
    let rate = |rng: &mut _| 10f64.powf(farm.log10_tunnel_rate.sample(rng));
    let mut spec = SimDeviceSpec {
        gate_length_nm: set.gate_length_nm,
        channel_width_nm: set.channel_width_nm,
        dot: DotParameters::new(v_1e, alpha_g, asymmetry),
        electron_temperature: farm.electron_temperature,
        tunnel_rate_source: rate(rng),
        tunnel_rate_drain: rate(rng),
        device_class: class,
        shape: ClassShape::SingleDot,
        noise_sigma: farm.noise_sigma,
        drift_amplitude: farm.drift_amplitude,
        n_averages: farm.n_averages,
        readout: farm.readout,
    };
    let truth = match class {
        DeviceClass::Good => {
            spec.dot = spec.dot.with_second_electron(v_1e + spacing);
            let mut t = spec.dot;
            t.charging_energy = Some(1e3 * spacing * alpha_g);
            Some(t)
        }
        DeviceClass::Bad => {
            let u =
                |lo: f64, hi: f64, rng: &mut ChaCha8Rng| Uniform::new(lo, hi).unwrap().sample(rng);
            let mut r = ChaCha8Rng::from_rng(rng);
            spec.shape = ClassShape::TurnOn {
                threshold: Normal::new(0.36, 0.04).sample(&mut r),
                width: u(0.006, 0.015, &mut r),
                dibl: u(0.5, 1.5, &mut r),
                ripple: u(0.05, 0.25, &mut r),
                spacing,
            };
            None
        }
        DeviceClass::Multi => {
            let mut r = ChaCha8Rng::from_rng(rng);
            let spacing = Uniform::new(0.015, 0.035).unwrap().sample(&mut r);
            let a2 = Normal::new(0.6, 0.1).sample(&mut r).clamp(0.35, 0.85);
            let d2 = Normal::new(0.0, 0.15)
                .sample(&mut r)
                .clamp(-(1.0 - a2), 1.0 - a2);
            let second = DotParameters::new(set.v_1e.sample(&mut r), a2, d2);
            spec.shape = ClassShape::SeriesDots {
                spacing,
                second,
                second_spacing: Uniform::new(0.015, 0.035).unwrap().sample(&mut r),
            };
            None
        }
    };
    (class, truth, spec)
}

/// Synthesises one labelled map per layout cell, in row-major cell order.
///
/// Parameters for device `i` come from stream `i` of a ChaCha generator
/// seeded with `seed`, so results do not depend on thread scheduling.
pub fn synth_farm(farm: &FarmSpec, layout: &FarmLayout, seed: u64) -> Result<Vec<SimulatedDevice>> {
    synth_cells(farm, layout, seed, |_| true)
}

/// Like [`synth_farm`] but only for cells (row-major index) accepted by
/// `keep`; each device is identical to its full-farm counterpart.
pub fn synth_cells(
    farm: &FarmSpec,
    layout: &FarmLayout,
    seed: u64,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<SimulatedDevice>> {
    let drafts: Vec<_> = layout
        .placements()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(i, p)| {
            let set = farm.set(p.set_id)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (class, truth, spec) = sample_device(farm, set, &mut rng);
            let map_seed: u64 = rng.random();
            Ok((p, class, truth, spec, map_seed))
        })
        .collect::<Result<_>>()?;

    drafts
        .into_par_iter()
        .map(|(p, class, truth, spec, map_seed)| {
            let mut map = synth_map(&spec, farm.vg, farm.vds, map_seed)?;
            map.device_id = p.device_id.clone();
            Ok(SimulatedDevice {
                device_id: p.device_id.clone(),
                set_id: p.set_id,
                row: p.row,
                col: p.col,
                class,
                truth,
                spec,
                map,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::place_default_farm;

    fn small_farm() -> FarmSpec {
        let mut f = FarmSpec::default_farm();
        // Coarse grid keeps the unit tests quick.
        f.vg = Axis::new(0.2, 0.6, 64).unwrap();
        f.vds = Axis::new(-0.02, 0.02, 16).unwrap();
        f
    }

    #[test]
    fn lever_arm_draws_are_physical() {
        let set = &FarmSpec::default_farm().sets[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let (a, d) = sample_lever_arms(set, &mut rng);
            assert!(a >= 0.5 && a + d.abs() <= 1.0);
        }
    }

    #[test]
    fn farm_covers_every_cell_with_labels() {
        let layout = place_default_farm(3);
        let devices = synth_farm(&small_farm(), &layout, 8).unwrap();
        assert_eq!(devices.len(), 1024);
        for d in &devices {
            assert_eq!(d.map.device_id, d.device_id);
            assert_eq!(d.truth.is_some(), d.class == DeviceClass::Good);
        }
    }

    #[test]
    fn forced_good_mix_labels_all_good() {
        let layout = place_default_farm(3);
        let farm = small_farm().with_class_mix([1.0, 0.0, 0.0]);
        let devices = synth_farm(&farm, &layout, 1).unwrap();
        assert!(devices.iter().all(|d| d.class == DeviceClass::Good));
    }

    #[test]
    fn short_gate_v1e_matches_generator() {
        let layout = place_default_farm(3);
        let farm = small_farm().with_class_mix([1.0, 0.0, 0.0]);
        let devices = synth_farm(&farm, &layout, 21).unwrap();
        let v: Vec<f64> = devices
            .iter()
            .filter(|d| d.spec.gate_length_nm == 28)
            .map(|d| d.truth.unwrap().v_1e)
            .collect();
        assert_eq!(v.len(), 256);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        // Per width set: 128 devices; pooled over both widths here.
        assert!(
            (mean - 0.387).abs() <= 3.0 * 0.022 / (128f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn seed_changes_maps_not_population() {
        let layout = place_default_farm(3);
        let farm = small_farm().with_class_mix([1.0, 0.0, 0.0]);
        let a = synth_farm(&farm, &layout, 1).unwrap();
        let b = synth_farm(&farm, &layout, 2).unwrap();
        assert_ne!(a[0].map.values(), b[0].map.values());
        let stats = |d: &[SimulatedDevice]| {
            let x: Vec<f64> = d.iter().map(|d| d.truth.unwrap().alpha_g).collect();
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
            (m, v)
        };
        let (ma, va) = stats(&a);
        let (mb, vb) = stats(&b);
        // Welch z-statistic for equal means.
        let z = (ma - mb) / ((va + vb) / 1024.0).sqrt();
        assert!(z.abs() < 4.0, "z = {z}");
    }
}
