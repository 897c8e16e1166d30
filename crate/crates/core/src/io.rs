//! On-disk formats: CSM1 maps, per-device records, ground truth, layouts,
//! scan plans and two-column numeric tables.
//!
//! CSM1 is plain text: `# key=value` header lines followed by one line per
//! bias sample (lowest first) of space-separated values, one per gate
//! sample. Values are written in shortest round-trip form, so a write/read
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::DeviceClass;
use crate::layout::{FarmLayout, Placement};
use crate::map::{Axis, ChargeStabilityMap, MapMode};
use crate::mux::{seconds_to_ns, DeviceScan, ScanPlan};
use crate::sim::{DotParameters, SimulatedDevice};

pub const CSM_EXTENSION: &str = "csm";

fn parse_err(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn write_csm(map: &ChargeStabilityMap, mut w: impl Write) -> Result<()> {
    if map.device_id.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::domain(format!(
            "device id '{}' may not contain whitespace or '='",
            map.device_id
        )));
    }
    let mut out = String::with_capacity(map.values().len() * 24 + 256);
    let _ = writeln!(out, "# format=CSM1");
    let _ = writeln!(out, "# device_id={}", map.device_id);
    let _ = writeln!(out, "# mode={}", map.mode);
    let _ = writeln!(out, "# vg_min={:e}", map.vg.min);
    let _ = writeln!(out, "# vg_max={:e}", map.vg.max);
    let _ = writeln!(out, "# vg_count={}", map.vg.count);
    let _ = writeln!(out, "# vds_min={:e}", map.vds.min);
    let _ = writeln!(out, "# vds_max={:e}", map.vds.max);
    let _ = writeln!(out, "# vds_count={}", map.vds.count);
    let _ = writeln!(out, "# units={}", map.mode.units());
    for row in map.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses a CSM1 map; `source` names the input in error messages.
pub fn read_csm(r: impl Read, source: &str) -> Result<ChargeStabilityMap> {
    let reader = BufReader::new(r);
    let mut header: Vec<(String, String, usize)> = Vec::new();
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if rows > 0 {
                return Err(parse_err(source, n, "header line after data"));
            }
            let (k, v) = h
                .trim()
                .split_once('=')
                .ok_or_else(|| parse_err(source, n, "header line without '='"))?;
            header.push((k.trim().to_string(), v.trim().to_string(), n));
            continue;
        }
        let before = values.len();
        for tok in t.split_ascii_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| parse_err(source, n, format!("bad number '{tok}'")))?,
            );
        }
        let count = values.len() - before;
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(source, n, format!("row has {count} values, expected {w}")))
            }
            _ => {}
        }
        rows += 1;
    }

    let get = |key: &str| -> Result<(&str, usize)> {
        header
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, n)| (v.as_str(), *n))
            .ok_or_else(|| parse_err(source, 1, format!("missing header key '{key}'")))
    };
    fn num<T: FromStr>(source: &str, (v, n): (&str, usize), key: &str) -> Result<T> {
        v.parse()
            .map_err(|_| parse_err(source, n, format!("bad value '{v}' for {key}")))
    }
    let (format, n) = get("format")?;
    if format != "CSM1" {
        return Err(parse_err(source, n, format!("unsupported format '{format}'")));
    }
    let device_id = get("device_id")?.0.to_string();
    let (mode, n) = get("mode")?;
    let mode: MapMode = mode.parse().map_err(|_| parse_err(source, n, format!("unknown mode '{mode}'")))?;
    let vg = Axis {
        min: num(source, get("vg_min")?, "vg_min")?,
        max: num(source, get("vg_max")?, "vg_max")?,
        count: num(source, get("vg_count")?, "vg_count")?,
    };
    let vds = Axis {
        min: num(source, get("vds_min")?, "vds_min")?,
        max: num(source, get("vds_max")?, "vds_max")?,
        count: num(source, get("vds_count")?, "vds_count")?,
    };
    if rows != vds.count || width.unwrap_or(0) != vg.count {
        return Err(parse_err(
            source,
            header.len() + rows,
            format!(
                "data is {rows}x{}, header says {}x{}",
                width.unwrap_or(0),
                vds.count,
                vg.count
            ),
        ));
    }
    ChargeStabilityMap::new(device_id, mode, vg, vds, values).map_err(|e| parse_err(source, 1, e.to_string()))
}

pub fn save_map(map: &ChargeStabilityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut w = BufWriter::new(f);
    write_csm(map, &mut w).map_err(|e| e.in_file(path))?;
    w.flush().map_err(|e| Error::from(e).in_file(path))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ChargeStabilityMap> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_csm(f, &path.display().to_string())
}

/// `.csm` files directly inside `dir`, sorted by name.
pub fn list_maps(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))? {
        let p = entry.map_err(|e| Error::from(e).in_file(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == CSM_EXTENSION) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::from(e).in_file(path))?;
    }
    w.flush().map_err(|e| Error::from(e).in_file(path))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| parse_err(&path.display().to_string(), i + 2, e.to_string()))
        })
        .collect()
}

/// Ground truth of one simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub device_id: String,
    pub set_id: u32,
    pub row: u32,
    pub col: u32,
    pub class: DeviceClass,
    pub v_1e: Option<f64>,
    pub alpha_g: Option<f64>,
    pub asymmetry: Option<f64>,
    pub v_2e: Option<f64>,
    pub charging_energy: Option<f64>,
}

impl TruthRecord {
    pub fn of(d: &SimulatedDevice) -> Self {
        let t = d.truth.as_ref();
        TruthRecord {
            device_id: d.device_id.clone(),
            set_id: d.set_id,
            row: d.row,
            col: d.col,
            class: d.class,
            v_1e: t.map(|t| t.v_1e),
            alpha_g: t.map(|t| t.alpha_g),
            asymmetry: t.map(|t| t.asymmetry),
            v_2e: t.and_then(|t| t.v_2e),
            charging_energy: t.and_then(|t| t.charging_energy),
        }
    }

    pub fn params(&self) -> Option<DotParameters> {
        Some(DotParameters {
            v_1e: self.v_1e?,
            alpha_g: self.alpha_g?,
            asymmetry: self.asymmetry?,
            v_2e: self.v_2e,
            charging_energy: self.charging_energy,
        })
    }
}

pub fn write_truth(path: impl AsRef<Path>, rows: &[TruthRecord]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    read_rows(path.as_ref())
}

/// Columns `row,col,set_id,device_id`, one line per cell.
pub fn write_layout(path: impl AsRef<Path>, layout: &FarmLayout) -> Result<()> {
    write_rows(path.as_ref(), layout.placements())
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<FarmLayout> {
    let path = path.as_ref();
    let rows: Vec<Placement> = read_rows(path)?;
    FarmLayout::from_placements(rows).map_err(|e| e.in_file(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    device_id: u32,
    points: u64,
    /// Integration time per point (s).
    tau: f64,
    averages: u64,
    /// Settling time before the map (s).
    settle: f64,
}

/// Columns `device_id,points,tau,averages,settle`, times in seconds.
pub fn write_scan_plan(path: impl AsRef<Path>, plan: &ScanPlan) -> Result<()> {
    let rows: Vec<PlanRow> = plan
        .devices
        .iter()
        .map(|d| PlanRow {
            device_id: d.device_id,
            points: d.points,
            tau: d.tau_ns as f64 * 1e-9,
            averages: d.averages,
            settle: d.settle_ns as f64 * 1e-9,
        })
        .collect();
    write_rows(path.as_ref(), &rows)
}

pub fn read_scan_plan(path: impl AsRef<Path>) -> Result<ScanPlan> {
    let path = path.as_ref();
    let rows: Vec<PlanRow> = read_rows(path)?;
    let devices = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let conv = |s: f64| {
                seconds_to_ns(s).map_err(|e| parse_err(&path.display().to_string(), i + 2, e.to_string()))
            };
            Ok(DeviceScan {
                device_id: r.device_id,
                points: r.points,
                tau_ns: conv(r.tau)?,
                averages: r.averages,
                settle_ns: conv(r.settle)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScanPlan::new(devices))
}

/// Reads `x y` pairs separated by commas or whitespace. Blank lines, `#`
/// comments and a non-numeric first line (a header) are skipped.
pub fn read_pairs(r: impl Read, source: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut seen_data = false;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t
            .split(|c: char| c == ',' || c.is_ascii_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: Option<Vec<f64>> = toks.iter().map(|s| s.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => out.push((v[0], v[1])),
            None if !seen_data => {}
            _ => return Err(parse_err(source, i + 1, format!("expected two numbers, got '{t}'"))),
        }
        seen_data = true;
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{source}: no data rows")));
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_pairs(f, &path.display().to_string())
}

/// Writes a header line and `x,y` rows.
pub fn save_pairs(path: impl AsRef<Path>, header: (&str, &str), rows: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut s = format!("{},{}\n", header.0, header.1);
    for (x, y) in rows {
        let _ = writeln!(s, "{x:e},{y:e}");
    }
    fs::write(path, s).map_err(|e| Error::from(e).in_file(path))
}
