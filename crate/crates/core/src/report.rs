//! Batch analysis of map files and the farm report built from it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{analyze_map, DeviceClass, DeviceResult, PipelineConfig};
use crate::io::{list_maps, load_map, TruthRecord};
use crate::layout::FarmLayout;
use crate::stats::describe;

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub set_id: Option<u32>,
    pub row: Option<u32>,
    pub col: Option<u32>,
    /// Absent when the analysis failed.
    pub class: Option<DeviceClass>,
    pub v_1e: Option<f64>,
    pub alpha_g: Option<f64>,
    pub asymmetry: Option<f64>,
    pub v_2e: Option<f64>,
    pub charging_energy: Option<f64>,
    pub score: Option<f64>,
    pub snr: Option<f64>,
    pub error: Option<String>,
}

impl DeviceRecord {
    pub fn from_result(r: &DeviceResult, layout: Option<&FarmLayout>) -> Self {
        let mut rec = DeviceRecord::empty(&r.device_id, layout);
        rec.class = Some(r.class);
        if let Some(p) = &r.params {
            rec.v_1e = Some(p.v_1e);
            rec.alpha_g = Some(p.alpha_g);
            rec.asymmetry = Some(p.asymmetry);
            rec.v_2e = p.v_2e;
            rec.charging_energy = p.charging_energy;
        }
        rec.score = r.score();
        rec.snr = r.snr;
        rec
    }

    pub fn failed(device_id: &str, layout: Option<&FarmLayout>, err: &Error) -> Self {
        let mut rec = DeviceRecord::empty(device_id, layout);
        rec.error = Some(err.to_string());
        rec
    }

    fn empty(device_id: &str, layout: Option<&FarmLayout>) -> Self {
        let p = layout.and_then(|l| l.device(device_id));
        DeviceRecord {
            device_id: device_id.to_string(),
            set_id: p.map(|p| p.set_id),
            row: p.map(|p| p.row),
            col: p.map(|p| p.col),
            class: None,
            v_1e: None,
            alpha_g: None,
            asymmetry: None,
            v_2e: None,
            charging_energy: None,
            score: None,
            snr: None,
            error: None,
        }
    }
}

/// Mean and standard deviation of one parameter within a set; zero count
/// leaves both empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        match describe(values) {
            Ok(d) => MeanStd {
                count: d.count,
                mean: Some(d.mean),
                std: Some(d.std),
            },
            Err(_) => MeanStd {
                count: 0,
                mean: None,
                std: None,
            },
        }
    }

    fn close(&self, other: &MeanStd) -> bool {
        let near = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-3),
            (None, None) => true,
            _ => false,
        };
        self.count == other.count && near(self.mean, other.mean) && near(self.std, other.std)
    }
}

/// One row of `sets.csv`; set `None` collects devices without a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAggregate {
    pub set_id: Option<u32>,
    pub devices: usize,
    pub good: usize,
    pub bad: usize,
    pub multi: usize,
    pub failed: usize,
    pub v_1e: MeanStd,
    pub alpha_g: MeanStd,
    pub asymmetry: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetRow {
    set_id: Option<u32>,
    devices: usize,
    good: usize,
    bad: usize,
    multi: usize,
    failed: usize,
    v_1e_count: usize,
    v_1e_mean: Option<f64>,
    v_1e_std: Option<f64>,
    alpha_g_count: usize,
    alpha_g_mean: Option<f64>,
    alpha_g_std: Option<f64>,
    asymmetry_count: usize,
    asymmetry_mean: Option<f64>,
    asymmetry_std: Option<f64>,
}

impl From<&SetAggregate> for SetRow {
    fn from(a: &SetAggregate) -> Self {
        SetRow {
            set_id: a.set_id,
            devices: a.devices,
            good: a.good,
            bad: a.bad,
            multi: a.multi,
            failed: a.failed,
            v_1e_count: a.v_1e.count,
            v_1e_mean: a.v_1e.mean,
            v_1e_std: a.v_1e.std,
            alpha_g_count: a.alpha_g.count,
            alpha_g_mean: a.alpha_g.mean,
            alpha_g_std: a.alpha_g.std,
            asymmetry_count: a.asymmetry.count,
            asymmetry_mean: a.asymmetry.mean,
            asymmetry_std: a.asymmetry.std,
        }
    }
}

impl From<SetRow> for SetAggregate {
    fn from(r: SetRow) -> Self {
        let ms = |count, mean, std| MeanStd { count, mean, std };
        SetAggregate {
            set_id: r.set_id,
            devices: r.devices,
            good: r.good,
            bad: r.bad,
            multi: r.multi,
            failed: r.failed,
            v_1e: ms(r.v_1e_count, r.v_1e_mean, r.v_1e_std),
            alpha_g: ms(r.alpha_g_count, r.alpha_g_mean, r.alpha_g_std),
            asymmetry: ms(r.asymmetry_count, r.asymmetry_mean, r.asymmetry_std),
        }
    }
}

/// One row of `classes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequency {
    pub class: DeviceClass,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub maps: usize,
    pub workers: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarmReport {
    /// Sorted by device id.
    pub records: Vec<DeviceRecord>,
    pub sets: Vec<SetAggregate>,
    pub classes: Vec<ClassFrequency>,
    pub timing: Option<Timing>,
}

fn aggregate(records: &[DeviceRecord]) -> (Vec<SetAggregate>, Vec<ClassFrequency>) {
    let mut by_set: BTreeMap<Option<u32>, Vec<&DeviceRecord>> = BTreeMap::new();
    for r in records {
        by_set.entry(r.set_id).or_default().push(r);
    }
    let sets = by_set
        .into_iter()
        .map(|(set_id, rs)| {
            let count = |c| rs.iter().filter(|r| r.class == Some(c)).count();
            // Parameter statistics over devices classified Good.
            let col = |f: fn(&DeviceRecord) -> Option<f64>| {
                rs.iter()
                    .filter(|r| r.class == Some(DeviceClass::Good))
                    .filter_map(|r| f(r))
                    .collect::<Vec<_>>()
            };
            SetAggregate {
                set_id,
                devices: rs.len(),
                good: count(DeviceClass::Good),
                bad: count(DeviceClass::Bad),
                multi: count(DeviceClass::Multi),
                failed: rs.iter().filter(|r| r.class.is_none()).count(),
                v_1e: MeanStd::of(&col(|r| r.v_1e)),
                alpha_g: MeanStd::of(&col(|r| r.alpha_g)),
                asymmetry: MeanStd::of(&col(|r| r.asymmetry)),
            }
        })
        .collect();
    let classified = records.iter().filter(|r| r.class.is_some()).count();
    let classes = DeviceClass::ALL
        .iter()
        .map(|&c| {
            let count = records.iter().filter(|r| r.class == Some(c)).count();
            ClassFrequency {
                class: c,
                count,
                fraction: if classified > 0 {
                    count as f64 / classified as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    (sets, classes)
}

impl FarmReport {
    pub fn from_records(mut records: Vec<DeviceRecord>, timing: Option<Timing>) -> Self {
        records.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        let (sets, classes) = aggregate(&records);
        FarmReport {
            records,
            sets,
            classes,
            timing,
        }
    }

    /// Recomputes the aggregate tables from the records and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let (sets, classes) = aggregate(&self.records);
        let sets_ok = sets.len() == self.sets.len()
            && sets.iter().zip(&self.sets).all(|(a, b)| {
                a.set_id == b.set_id
                    && (a.devices, a.good, a.bad, a.multi, a.failed) == (b.devices, b.good, b.bad, b.multi, b.failed)
                    && a.v_1e.close(&b.v_1e)
                    && a.alpha_g.close(&b.alpha_g)
                    && a.asymmetry.close(&b.asymmetry)
            });
        let classes_ok = classes.len() == self.classes.len()
            && classes
                .iter()
                .zip(&self.classes)
                .all(|(a, b)| a.class == b.class && a.count == b.count && (a.fraction - b.fraction).abs() < 1e-12);
        if sets_ok && classes_ok {
            Ok(())
        } else {
            Err(Error::domain("report aggregates do not match its records"))
        }
    }

    pub fn class_of(&self, device_id: &str) -> Option<DeviceClass> {
        self.records
            .binary_search_by(|r| r.device_id.as_str().cmp(device_id))
            .ok()
            .and_then(|i| self.records[i].class)
    }

    /// Writes `records.csv`, `sets.csv`, `classes.csv` and, when present,
    /// `timing.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        write_csv(&dir.join("records.csv"), &self.records)?;
        let rows: Vec<SetRow> = self.sets.iter().map(SetRow::from).collect();
        write_csv(&dir.join("sets.csv"), &rows)?;
        write_csv(&dir.join("classes.csv"), &self.classes)?;
        if let Some(t) = &self.timing {
            write_csv(&dir.join("timing.csv"), std::slice::from_ref(t))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let records = read_csv(&dir.join("records.csv"))?;
        let sets: Vec<SetRow> = read_csv(&dir.join("sets.csv"))?;
        let classes = read_csv(&dir.join("classes.csv"))?;
        let timing_path = dir.join("timing.csv");
        let timing = if timing_path.exists() {
            read_csv::<Timing>(&timing_path)?.into_iter().next()
        } else {
            None
        };
        Ok(FarmReport {
            records,
            sets: sets.into_iter().map(SetAggregate::from).collect(),
            classes,
            timing,
        })
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::from(e).in_file(path))?;
    }
    w.flush().map_err(|e| Error::from(e).in_file(path))
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::from(e).in_file(path))
}

/// Result of a batch run: the report plus files that could not be read.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: FarmReport,
    pub unreadable: Vec<(PathBuf, Error)>,
}

/// Analyses one map file or every `.csm` file in a directory, using
/// `workers` threads (all cores when `None`). Maps that cannot be read are
/// listed; analysis failures become records with an error message.
pub fn run_pipeline(
    path: impl AsRef<Path>,
    cfg: &PipelineConfig,
    workers: Option<usize>,
    layout: Option<&FarmLayout>,
) -> Result<PipelineRun> {
    let path = path.as_ref();
    let files = if path.is_dir() {
        list_maps(path)?
    } else if path.exists() {
        vec![path.to_path_buf()]
    } else {
        return Err(Error::Io(std::io::ErrorKind::NotFound.into()).in_file(path));
    };
    if files.is_empty() {
        return Err(Error::Empty(format!("{}: no .csm maps", path.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(e.to_string()))?;
    let start = Instant::now();
    let outcomes: Vec<std::result::Result<DeviceRecord, (PathBuf, Error)>> = pool.install(|| {
        files
            .par_iter()
            .map(|f| {
                let map = load_map(f).map_err(|e| (f.clone(), e))?;
                Ok(match analyze_map(&map, cfg) {
                    Ok(r) => DeviceRecord::from_result(&r, layout),
                    Err(e) => DeviceRecord::failed(&map.device_id, layout, &e),
                })
            })
            .collect()
    });
    let mut records = Vec::with_capacity(outcomes.len());
    let mut unreadable = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(e) => unreadable.push(e),
        }
    }
    let timing = Timing {
        maps: files.len(),
        workers: pool.current_num_threads(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineRun {
        report: FarmReport::from_records(records, Some(timing)),
        unreadable,
    })
}

/// Per-parameter error summary over devices that are Good in both truth
/// and analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub within_tolerance: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `confusion[truth][predicted]` in Good, Bad, Multi order.
    pub confusion: [[usize; 3]; 3],
    pub matched: usize,
    pub agreement: f64,
    pub v_1e: Option<ErrorSummary>,
    pub alpha_g: Option<ErrorSummary>,
    pub asymmetry: Option<ErrorSummary>,
    /// Truth devices missing from the report or without a class.
    pub unmatched: usize,
}

/// Default round-trip tolerances for `v_1e`, `alpha_g` and asymmetry.
pub const PARAMETER_TOLERANCES: [f64; 3] = [0.005, 0.05, 0.08];

fn class_index(c: DeviceClass) -> usize {
    DeviceClass::ALL.iter().position(|&x| x == c).unwrap_or(0)
}

pub fn compare(report: &FarmReport, truth: &[TruthRecord], tolerances: [f64; 3]) -> Comparison {
    let by_id: HashMap<&str, &DeviceRecord> = report.records.iter().map(|r| (r.device_id.as_str(), r)).collect();
    let mut confusion = [[0usize; 3]; 3];
    let mut unmatched = 0;
    let mut errs: [Vec<f64>; 3] = Default::default();
    for t in truth {
        let Some(rec) = by_id.get(t.device_id.as_str()) else {
            unmatched += 1;
            continue;
        };
        let Some(class) = rec.class else {
            unmatched += 1;
            continue;
        };
        confusion[class_index(t.class)][class_index(class)] += 1;
        let pairs = [(t.v_1e, rec.v_1e), (t.alpha_g, rec.alpha_g), (t.asymmetry, rec.asymmetry)];
        if t.class == DeviceClass::Good && class == DeviceClass::Good {
            for (k, (a, b)) in pairs.into_iter().enumerate() {
                if let (Some(a), Some(b)) = (a, b) {
                    errs[k].push((a - b).abs());
                }
            }
        }
    }
    let matched: usize = confusion.iter().flatten().sum();
    let diag: usize = (0..3).map(|i| confusion[i][i]).sum();
    let summary = |e: &[f64], tol: f64| {
        (!e.is_empty()).then(|| ErrorSummary {
            count: e.len(),
            mean_abs: e.iter().sum::<f64>() / e.len() as f64,
            max_abs: e.iter().copied().fold(0.0, f64::max),
            within_tolerance: e.iter().filter(|&&x| x <= tol).count(),
            tolerance: tol,
        })
    };
    Comparison {
        confusion,
        matched,
        agreement: if matched > 0 { diag as f64 / matched as f64 } else { 0.0 },
        v_1e: summary(&errs[0], tolerances[0]),
        alpha_g: summary(&errs[1], tolerances[1]),
        asymmetry: summary(&errs[2], tolerances[2]),
        unmatched,
    }
}
