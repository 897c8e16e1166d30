//! Time-division multiplexed addressing of the 32×32 device array:
//! one-hot decoding, transmission-gate on-resistance and scan budgets.

use std::collections::BTreeSet;
use std::sync::{Mutex, PoisonError};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROWS: u32 = 32;
pub const COLS: u32 = 32;
pub const DEVICES: usize = (ROWS * COLS) as usize;

/// Linear device index `32 row + col`.
pub fn device_index(row: u32, col: u32) -> Result<usize> {
    if row >= ROWS || col >= COLS {
        return Err(Error::AddressOutOfRange { row, col });
    }
    Ok((row * COLS + col) as usize)
}

/// Inverse of [`device_index`].
pub fn address_of(index: usize) -> Result<(u32, u32)> {
    if index >= DEVICES {
        return Err(Error::domain(format!("device index {index} outside 0..{DEVICES}")));
    }
    Ok((index as u32 / COLS, index as u32 % COLS))
}

/// One-hot select lines for a 5-bit row and 5-bit column address.
pub fn decode_address(row: u32, col: u32) -> Result<Vec<bool>> {
    let hot = device_index(row, col)?;
    let mut v = vec![false; DEVICES];
    v[hot] = true;
    Ok(v)
}

/// Switch state of the multiplexer chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuxState {
    pub row_address: u32,
    pub col_address: u32,
    /// n-well back-gate voltage (V).
    pub v_nw: f64,
    /// p-well back-gate voltage (V).
    pub v_pw: f64,
    pub powered: bool,
}

impl Default for MuxState {
    fn default() -> Self {
        MuxState {
            row_address: 0,
            col_address: 0,
            v_nw: 2.0,
            v_pw: -2.0,
            powered: false,
        }
    }
}

impl MuxState {
    pub fn select(&mut self, row: u32, col: u32) -> Result<()> {
        device_index(row, col)?;
        self.row_address = row;
        self.col_address = col;
        self.powered = true;
        Ok(())
    }

    pub fn power_off(&mut self) {
        self.powered = false;
    }

    /// Index of the open transmission gate, if any.
    pub fn selected(&self) -> Option<usize> {
        self.powered
            .then(|| (self.row_address * COLS + self.col_address) as usize)
    }

    pub fn gate_open(&self, index: usize) -> bool {
        self.selected() == Some(index)
    }

    /// Deselected devices are held at ground by their pull-down transistor.
    pub fn grounded(&self, index: usize) -> bool {
        !self.gate_open(index)
    }

    /// State of all 1024 transmission gates.
    pub fn gates(&self) -> Vec<bool> {
        (0..DEVICES).map(|i| self.gate_open(i)).collect()
    }
}

/// Multiplexer shared between threads: address changes are serialised,
/// readers take snapshots.
#[derive(Debug, Default)]
pub struct SharedMux(Mutex<MuxState>);

impl SharedMux {
    pub fn new(state: MuxState) -> Self {
        SharedMux(Mutex::new(state))
    }

    pub fn select(&self, row: u32, col: u32) -> Result<()> {
        self.0
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .select(row, col)
    }

    pub fn power_off(&self) {
        self.0
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .power_off();
    }

    pub fn snapshot(&self) -> MuxState {
        *self.0.lock().unwrap_or_else(PoisonError::into_inner)
    }
}

/// Logistic transmission-gate resistance against back-gate drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    /// Saturated on-resistance at strong back-bias (Ω).
    pub r_floor: f64,
    /// On-resistance without back-bias at the reference common mode (Ω).
    pub r_zero_bias: f64,
    /// Back-bias `(v_nw - v_pw) / 2` at the logistic midpoint (V).
    pub midpoint: f64,
    /// Logistic width (V).
    pub width: f64,
    /// Common-mode voltage at which `r_zero_bias` applies (V).
    pub reference_common_mode: f64,
    /// The excess resistance scales by `exp((cm - ref) / cm_scale)`.
    pub cm_scale: f64,
    /// Source resistance scale of the readout: SNR falls as
    /// `(r_floor + r_knee) / (r_on + r_knee)`.
    pub r_knee: f64,
}

impl Default for GateModel {
    fn default() -> Self {
        GateModel {
            r_floor: 2e3,
            r_zero_bias: 40e3,
            midpoint: 0.75,
            width: 0.2,
            reference_common_mode: 0.4,
            cm_scale: 0.2,
            r_knee: 5e3,
        }
    }
}

impl GateModel {
    pub fn r_on(&self, v_nw: f64, v_pw: f64, common_mode: f64) -> f64 {
        let bias = 0.5 * (v_nw - v_pw);
        let logistic = |b: f64| 1.0 / (1.0 + ((b - self.midpoint) / self.width).exp());
        let excess = (self.r_zero_bias - self.r_floor) / logistic(0.0);
        let cm = ((common_mode - self.reference_common_mode) / self.cm_scale).exp();
        self.r_floor + excess * cm * logistic(bias)
    }

    pub fn effective_snr(&self, base_snr: f64, r_on: f64) -> f64 {
        if r_on.is_infinite() {
            return 0.0;
        }
        base_snr * (self.r_floor + self.r_knee) / (r_on + self.r_knee)
    }
}

/// [`GateModel::r_on`] with default parameters.
pub fn r_on(v_nw: f64, v_pw: f64, common_mode: f64) -> f64 {
    GateModel::default().r_on(v_nw, v_pw, common_mode)
}

/// [`GateModel::effective_snr`] with default parameters.
pub fn effective_snr(base_snr: f64, r_on: f64) -> f64 {
    GateModel::default().effective_snr(base_snr, r_on)
}

/// Acquisition settings of one device; times in integer nanoseconds so
/// that budgets add up exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceScan {
    pub device_id: u32,
    pub points: u64,
    pub tau_ns: u64,
    pub averages: u64,
    pub settle_ns: u64,
}

impl DeviceScan {
    pub fn duration_ns(&self) -> u64 {
        self.points * self.tau_ns * self.averages + self.settle_ns
    }
}

/// Seconds to whole nanoseconds; rejects values that are not a whole
/// number of nanoseconds to within rounding.
pub fn seconds_to_ns(s: f64) -> Result<u64> {
    let ns = s * 1e9;
    if !(ns >= 0.0) || !ns.is_finite() {
        return Err(Error::domain(format!("time {s} s must be non-negative")));
    }
    let r = ns.round();
    if (ns - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::domain(format!("time {s} s is not a whole number of nanoseconds")));
    }
    Ok(r as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPlan {
    /// Devices in acquisition order.
    pub devices: Vec<DeviceScan>,
    /// Number of devices the plan must cover, ids `0..n_devices`.
    pub n_devices: usize,
}

impl ScanPlan {
    pub fn new(devices: Vec<DeviceScan>) -> Self {
        ScanPlan {
            devices,
            n_devices: DEVICES,
        }
    }

    /// Every device at the same settings, in index order.
    pub fn uniform(points: u64, tau_ns: u64, averages: u64, settle_ns: u64) -> Self {
        ScanPlan::new(
            (0..DEVICES as u32)
                .map(|device_id| DeviceScan {
                    device_id,
                    points,
                    tau_ns,
                    averages,
                    settle_ns,
                })
                .collect(),
        )
    }

    /// Full 256×128 maps at 1 µs and 8 averages with a 30.82475 ms settle
    /// per device: exactly 300 s for the array.
    pub fn default_farm() -> Self {
        ScanPlan::uniform(256 * 128, 1_000, 8, 30_824_750)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::InvalidPlan("plan has no devices".into()));
        }
        let mut seen = BTreeSet::new();
        for d in &self.devices {
            if d.device_id as usize >= self.n_devices {
                return Err(Error::InvalidPlan(format!(
                    "device {} outside 0..{}",
                    d.device_id, self.n_devices
                )));
            }
            if !seen.insert(d.device_id) {
                return Err(Error::InvalidPlan(format!("device {} listed twice", d.device_id)));
            }
        }
        if seen.len() != self.n_devices {
            let missing: Vec<u32> = (0..self.n_devices as u32)
                .filter(|i| !seen.contains(i))
                .take(5)
                .collect();
            return Err(Error::InvalidPlan(format!(
                "{} devices missing, e.g. {missing:?}",
                self.n_devices - seen.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub total_ns: u64,
    /// `(device_id, duration_ns)` in acquisition order.
    pub per_device: Vec<(u32, u64)>,
    pub budget_ns: Option<u64>,
    pub over_budget: bool,
}

impl ScanReport {
    pub fn total_seconds(&self) -> f64 {
        self.total_ns as f64 * 1e-9
    }
}

/// Exact total acquisition time of a plan, flagged against an optional
/// budget.
pub fn scan_time(plan: &ScanPlan, budget_ns: Option<u64>) -> Result<ScanReport> {
    plan.validate()?;
    let per_device: Vec<(u32, u64)> = plan
        .devices
        .iter()
        .map(|d| (d.device_id, d.duration_ns()))
        .collect();
    let total_ns = per_device
        .iter()
        .try_fold(0u64, |acc, (_, t)| acc.checked_add(*t))
        .ok_or_else(|| Error::InvalidPlan("total time overflows".into()))?;
    Ok(ScanReport {
        total_ns,
        per_device,
        budget_ns,
        over_budget: budget_ns.is_some_and(|b| total_ns > b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn corners_decode() {
        assert!(decode_address(0, 0).unwrap()[0]);
        assert!(decode_address(31, 31).unwrap()[1023]);
        assert!(matches!(decode_address(32, 0), Err(Error::AddressOutOfRange { .. })));
        assert!(decode_address(0, 32).is_err());
    }

    #[test]
    fn decoding_is_a_bijection() {
        let mut seen = vec![false; DEVICES];
        for row in 0..ROWS {
            for col in 0..COLS {
                let v = decode_address(row, col).unwrap();
                assert_eq!(v.iter().filter(|&&b| b).count(), 1);
                let i = v.iter().position(|&b| b).unwrap();
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(address_of(i).unwrap(), (row, col));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn one_gate_open_when_powered() {
        let mut m = MuxState::default();
        assert!(m.gates().iter().all(|g| !g));
        assert!((0..DEVICES).all(|i| m.grounded(i)));
        for i in 0..DEVICES {
            let (r, c) = address_of(i).unwrap();
            m.select(r, c).unwrap();
            let g = m.gates();
            assert_eq!(g.iter().filter(|&&b| b).count(), 1);
            assert!(g[i]);
            assert_eq!((0..DEVICES).filter(|&k| m.grounded(k)).count(), DEVICES - 1);
        }
        m.power_off();
        assert_eq!(m.selected(), None);
    }

    #[test]
    fn shared_mux_serialises_selection() {
        let mux = SharedMux::default();
        std::thread::scope(|s| {
            for t in 0..4u32 {
                let mux = &mux;
                s.spawn(move || {
                    for c in 0..COLS {
                        mux.select(t, c).unwrap();
                        let snap = mux.snapshot();
                        assert_eq!(snap.gates().iter().filter(|&&b| b).count(), 1);
                    }
                });
            }
        });
        assert!(mux.snapshot().powered);
        assert!(mux.select(40, 0).is_err());
    }

    #[test]
    fn gate_resistance_shape() {
        let sat = r_on(2.0, -2.0, 0.4);
        assert!((sat / 2e3 - 1.0).abs() < 0.25, "{sat}");
        let zero = r_on(0.0, 0.0, 0.4);
        assert!(zero >= 20e3 && zero >= 10.0 * sat, "{zero}");
        assert!((zero - 40e3).abs() < 1e-6);
        assert!(r_on(1.0, -1.0, 0.4) >= sat);
        let mut last = f64::INFINITY;
        for k in 0..=40 {
            let v = k as f64 * 0.05;
            let r = r_on(v, -v, 0.4);
            assert!(r <= last);
            last = r;
        }
        assert!(r_on(2.0, 0.0, 0.4) > r_on(2.0, -1.0, 0.4));
    }

    #[test]
    fn snr_degrades_with_resistance() {
        assert_eq!(effective_snr(20.0, 2e3), 20.0);
        assert!(effective_snr(20.0, 20e3) < 20.0);
        assert_eq!(effective_snr(20.0, f64::INFINITY), 0.0);
        assert!(effective_snr(20.0, 1e12) < 1e-6);
    }

    #[test]
    fn default_plan_is_five_minutes() {
        let r = scan_time(&ScanPlan::default_farm(), Some(300_000_000_000)).unwrap();
        assert_eq!(r.total_ns, 300_000_000_000);
        assert!(!r.over_budget);
        assert_eq!(r.per_device.len(), 1024);
    }

    #[test]
    fn documented_budgets() {
        // 286 ms of map plus 7 ms settle per device.
        let a = scan_time(&ScanPlan::uniform(286_000, 1_000, 1, 7_000_000), None).unwrap();
        assert_eq!(a.total_ns, 1024 * 293_000_000);
        assert!((a.total_seconds() - 300.0).abs() < 0.05);
        let b = scan_time(&ScanPlan::uniform(8192, 1_000, 1, 10_000_000), None).unwrap();
        assert_eq!(b.total_ns, 1024 * 18_192_000);
        assert!((b.total_seconds() - 18.6).abs() < 0.05);
        let over = scan_time(&ScanPlan::default_farm(), Some(299_999_999_999)).unwrap();
        assert!(over.over_budget);
    }

    #[test]
    fn invalid_plans() {
        assert!(matches!(scan_time(&ScanPlan::new(vec![]), None), Err(Error::InvalidPlan(_))));
        let mut dup = ScanPlan::default_farm();
        dup.devices[5].device_id = 4;
        assert!(scan_time(&dup, None).is_err());
        let mut missing = ScanPlan::default_farm();
        missing.devices.pop();
        assert!(scan_time(&missing, None).is_err());
    }

    #[test]
    fn nanosecond_conversion() {
        assert_eq!(seconds_to_ns(1e-6).unwrap(), 1_000);
        assert_eq!(seconds_to_ns(0.03082475).unwrap(), 30_824_750);
        assert!(seconds_to_ns(1e-10).is_err());
        assert!(seconds_to_ns(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn scan_time_is_order_invariant(seed in any::<u64>(), points in 1u64..100_000, settle in 0u64..50_000_000) {
            let mut plan = ScanPlan::uniform(points, 1_000, 1, settle);
            plan.devices.iter_mut().for_each(|d| d.averages = 1 + d.device_id as u64 % 3);
            let before = scan_time(&plan, None).unwrap().total_ns;
            plan.devices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(scan_time(&plan, None).unwrap().total_ns, before);
        }
    }
}
