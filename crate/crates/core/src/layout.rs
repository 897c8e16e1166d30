//! Common-centroid randomised placement of instance sets in the 32×32 farm,
//! and layout-effect diagnostics.
//!
//! Cells are assigned in point-mirrored pairs `(r, c)` / `(31 - r, 31 - c)`.
//! Every pair has centroid (15.5, 15.5), so any union of pairs does too; the
//! constraint holds exactly by construction rather than by repair.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::DeviceClass;
use crate::stats::kld_uniform;

pub const GRID: usize = 32;
pub const CELLS: usize = GRID * GRID;

/// One transistor variant; all devices of a set share dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub set_id: u32,
    pub gate_length_nm: u32,
    pub channel_width_nm: u32,
}

/// The eight farm variants: gate lengths 28/40/60/80 nm × widths 80/100 nm.
pub fn default_sets() -> Vec<InstanceSet> {
    let mut out = Vec::with_capacity(8);
    for (i, l) in [28, 40, 60, 80].into_iter().enumerate() {
        for (j, w) in [80, 100].into_iter().enumerate() {
            out.push(InstanceSet {
                set_id: (2 * i + j) as u32,
                gate_length_nm: l,
                channel_width_nm: w,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub row: u32,
    pub col: u32,
    pub set_id: u32,
    pub device_id: String,
}

impl Placement {
    /// Row-major cell index, identical to the multiplexer address index.
    pub fn cell_index(&self) -> usize {
        self.row as usize * GRID + self.col as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarmLayout {
    cells: Vec<Placement>,
    by_device: HashMap<String, usize>,
}

impl FarmLayout {
    /// Validates that `placements` occupy every cell once and name every
    /// device once.
    pub fn from_placements(placements: Vec<Placement>) -> Result<Self> {
        if placements.len() != CELLS {
            return Err(Error::domain(format!(
                "layout needs {CELLS} placements, got {}",
                placements.len()
            )));
        }
        let mut cells: Vec<Option<Placement>> = vec![None; CELLS];
        let mut by_device = HashMap::with_capacity(CELLS);
        for p in placements {
            if p.row as usize >= GRID || p.col as usize >= GRID {
                return Err(Error::AddressOutOfRange {
                    row: p.row,
                    col: p.col,
                });
            }
            let idx = p.cell_index();
            if cells[idx].is_some() {
                return Err(Error::domain(format!(
                    "cell ({}, {}) placed twice",
                    p.row, p.col
                )));
            }
            if by_device.insert(p.device_id.clone(), idx).is_some() {
                return Err(Error::domain(format!(
                    "device {} placed twice",
                    p.device_id
                )));
            }
            cells[idx] = Some(p);
        }
        Ok(FarmLayout {
            cells: cells
                .into_iter()
                .map(|c| c.expect("all cells filled"))
                .collect(),
            by_device,
        })
    }

    /// Placements in row-major cell order.
    pub fn placements(&self) -> &[Placement] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &Placement {
        &self.cells[row * GRID + col]
    }

    pub fn device(&self, device_id: &str) -> Option<&Placement> {
        self.by_device.get(device_id).map(|&i| &self.cells[i])
    }

    pub fn set_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.cells.iter().map(|p| p.set_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn set_members(&self, set_id: u32) -> impl Iterator<Item = &Placement> {
        self.cells.iter().filter(move |p| p.set_id == set_id)
    }
}

/// Places sets of the given sizes (summing to 1024, each even) with a
/// seeded random order of mirrored cell pairs.
pub fn place_farm(set_sizes: &[usize], seed: u64) -> Result<FarmLayout> {
    let total: usize = set_sizes.iter().sum();
    if total != CELLS {
        return Err(Error::domain(format!(
            "set sizes sum to {total}, expected {CELLS}"
        )));
    }
    if let Some((i, s)) = set_sizes.iter().enumerate().find(|(_, &s)| s % 2 == 1) {
        return Err(Error::domain(format!(
            "set {i} has odd size {s}; mirrored pairs cannot centre it"
        )));
    }
    // Row-major index i mirrors to CELLS-1-i.
    let mut pairs: Vec<usize> = (0..CELLS / 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let mut placements = Vec::with_capacity(CELLS);
    let mut next = pairs.into_iter();
    for (set_id, &size) in set_sizes.iter().enumerate() {
        let mut k = 0usize;
        for cell in next.by_ref().take(size / 2) {
            for idx in [cell, CELLS - 1 - cell] {
                placements.push(Placement {
                    row: (idx / GRID) as u32,
                    col: (idx % GRID) as u32,
                    set_id: set_id as u32,
                    device_id: format!("S{set_id}-{k:03}"),
                });
                k += 1;
            }
        }
    }
    FarmLayout::from_placements(placements)
}

/// Eight equal sets of 128.
pub fn place_default_farm(seed: u64) -> FarmLayout {
    place_farm(&[128; 8], seed).expect("default set sizes are valid")
}

/// Mean (row, column) index of a set's cells.
pub fn centroid(layout: &FarmLayout, set_id: u32) -> Result<(f64, f64)> {
    let (n, rs, cs) = layout
        .set_members(set_id)
        .fold((0u64, 0u64, 0u64), |(n, r, c), p| {
            (n + 1, r + p.row as u64, c + p.col as u64)
        });
    if n == 0 {
        return Err(Error::UnknownSet(set_id));
    }
    Ok((rs as f64 / n as f64, cs as f64 / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassUniformity {
    pub class: DeviceClass,
    pub count: usize,
    pub row_histogram: Vec<u64>,
    pub col_histogram: Vec<u64>,
    pub set_histogram: Vec<u64>,
    pub row_kld: f64,
    pub col_kld: f64,
    pub set_kld: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub classes: Vec<ClassUniformity>,
    /// Mean and sample standard deviation over all row and column KLDs.
    pub rowcol_kld_mean: f64,
    pub rowcol_kld_std: f64,
    /// Mean over classes of the by-device-type KLD.
    pub by_type_kld_mean: f64,
}

/// Per-class row, column and instance-set histograms and their divergence
/// from uniform. Classes with no devices are skipped.
pub fn uniformity(
    layout: &FarmLayout,
    class_of: impl Fn(&str) -> Option<DeviceClass>,
) -> Result<UniformityReport> {
    let set_ids = layout.set_ids();
    let set_pos: HashMap<u32, usize> = set_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut classes = Vec::new();
    for class in DeviceClass::ALL {
        let mut rows = vec![0u64; GRID];
        let mut cols = vec![0u64; GRID];
        let mut sets = vec![0u64; set_ids.len()];
        let mut count = 0;
        for p in layout.placements() {
            let c = class_of(&p.device_id).ok_or_else(|| {
                Error::domain(format!("no class available for device {}", p.device_id))
            })?;
            if c == class {
                rows[p.row as usize] += 1;
                cols[p.col as usize] += 1;
                sets[set_pos[&p.set_id]] += 1;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        classes.push(ClassUniformity {
            class,
            count,
            row_kld: kld_uniform(&rows)?,
            col_kld: kld_uniform(&cols)?,
            set_kld: kld_uniform(&sets)?,
            row_histogram: rows,
            col_histogram: cols,
            set_histogram: sets,
        });
    }
    if classes.is_empty() {
        return Err(Error::Empty("no classified devices".into()));
    }
    let rowcol: Vec<f64> = classes
        .iter()
        .flat_map(|c| [c.row_kld, c.col_kld])
        .collect();
    let mean = rowcol.iter().sum::<f64>() / rowcol.len() as f64;
    let std = if rowcol.len() > 1 {
        (rowcol.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (rowcol.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let by_type = classes.iter().map(|c| c.set_kld).sum::<f64>() / classes.len() as f64;
    Ok(UniformityReport {
        classes,
        rowcol_kld_mean: mean,
        rowcol_kld_std: std,
        by_type_kld_mean: by_type,
    })
}
