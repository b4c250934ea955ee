//! Exposure frequency: the on-road occurrence distribution over grid cells,
//! its high-exposure zone, and a synthetic stand-in for naturalistic data.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScenarioGrid, ScenarioPoint};
use crate::numeric;
use crate::rng;

pub const DEFAULT_ZONE_MASS: f64 = 0.95;

/// Absolute slack when comparing a cumulative mass against a target, so
/// that e.g. 0.6 + 0.3 still reaches 0.9.
const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureModel {
    pub grid: ScenarioGrid,
    pub mass: Vec<f64>,
    pub zone_mask: Vec<bool>,
    pub zone_mass_target: f64,
}

/// Result of binning raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFit {
    pub model: ExposureModel,
    pub in_bounds: usize,
    pub out_of_bounds: usize,
}

impl ExposureModel {
    /// Model from explicit per-cell masses; zone recomputed at `zone_mass_target`.
    pub fn from_masses(grid: ScenarioGrid, mass: Vec<f64>, zone_mass_target: f64) -> Result<Self> {
        if mass.len() != grid.total_cells() {
            return Err(Error::GridMismatch);
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "masses must be finite and >= 0".into(),
            ));
        }
        let total = numeric::sum(mass.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        let zone_mask = high_exposure_zone(&mass, zone_mass_target)?;
        Ok(Self {
            grid,
            mass,
            zone_mask,
            zone_mass_target,
        })
    }

    pub fn zone_size(&self) -> usize {
        self.zone_mask.iter().filter(|&&z| z).count()
    }

    pub fn distance_to_zone(&self, point: &ScenarioPoint) -> Result<f64> {
        distance_to_zone(&self.grid, &self.zone_mask, point)
    }

    /// Per-cell normalized zone distance, computed once for a whole grid.
    pub fn zone_distance_table(&self) -> Result<Vec<f64>> {
        (0..self.grid.total_cells())
            .map(|f| self.distance_to_zone(&self.grid.point(f)))
            .collect()
    }
}

/// Bin samples to their nearest cells; out-of-bounds samples are counted, not binned.
pub fn fit_histogram(grid: &ScenarioGrid, samples: &[Vec<f64>]) -> Result<HistogramFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0u64; grid.total_cells()];
    let mut out_of_bounds = 0;
    for s in samples {
        if !grid.contains(s) {
            out_of_bounds += 1;
            continue;
        }
        let idx = grid.point_to_index(s)?;
        counts[grid.flat_index(&idx)?] += 1;
    }
    let in_bounds = samples.len() - out_of_bounds;
    if in_bounds == 0 {
        return Err(Error::AllOutOfBounds(out_of_bounds));
    }
    if out_of_bounds > 0 {
        log::info!(
            "{out_of_bounds} of {} samples outside grid bounds",
            samples.len()
        );
    }
    let n = in_bounds as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let zone_mask = high_exposure_zone(&mass, DEFAULT_ZONE_MASS)?;
    Ok(HistogramFit {
        model: ExposureModel {
            grid: grid.clone(),
            mass,
            zone_mask,
            zone_mass_target: DEFAULT_ZONE_MASS,
        },
        in_bounds,
        out_of_bounds,
    })
}

/// Greedy highest-density region: cells by descending mass (ties to the
/// lower flat index) until the cumulative mass reaches `mass_target`.
pub fn high_exposure_zone(mass: &[f64], mass_target: f64) -> Result<Vec<bool>> {
    if !(mass_target > 0.0 && mass_target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "zone mass target {mass_target} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut mask = vec![false; mass.len()];
    let mut acc = numeric::CompensatedSum::new();
    for i in order {
        if acc.value() >= mass_target - MASS_SLACK {
            break;
        }
        mask[i] = true;
        acc.add(mass[i]);
    }
    Ok(mask)
}

/// Minimum Euclidean distance, in range-normalized coordinates, from `point`
/// to any zone cell. Zero inside the zone.
pub fn distance_to_zone(
    grid: &ScenarioGrid,
    zone_mask: &[bool],
    point: &ScenarioPoint,
) -> Result<f64> {
    if zone_mask.len() != grid.total_cells() {
        return Err(Error::GridMismatch);
    }
    if let Ok(f) = grid.flat_index(&point.index) {
        if zone_mask[f] {
            return Ok(0.0);
        }
    }
    let here = grid.normalized(&point.values);
    let mut best: Option<f64> = None;
    for (f, _) in zone_mask.iter().enumerate().filter(|(_, &z)| z) {
        let there = grid.normalized(&grid.point(f).values);
        let d2: f64 = here
            .iter()
            .zip(&there)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        best = Some(best.map_or(d2, |b: f64| b.min(d2)));
    }
    best.map(f64::sqrt).ok_or(Error::EmptyZone)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Truncated Gaussian-mixture generator for synthetic naturalistic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NddSpec {
    pub components: Vec<MixtureComponent>,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for NddSpec {
    /// Dense main traffic mode plus a wide background mode that keeps the
    /// closing, short-range corner of the grid populated.
    fn default() -> Self {
        Self {
            components: vec![
                MixtureComponent {
                    weight: 0.8,
                    mean: vec![45.0, -1.0],
                    std: vec![15.0, 3.0],
                },
                MixtureComponent {
                    weight: 0.2,
                    mean: vec![35.0, -5.0],
                    std: vec![30.0, 10.0],
                },
            ],
            sample_count: 400_000,
            seed: 0,
        }
    }
}

impl NddSpec {
    pub fn validate(&self, grid: &ScenarioGrid) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.components.is_empty() {
            return bad("ndd needs at least one component".into());
        }
        if self.sample_count == 0 {
            return bad("ndd sample_count must be positive".into());
        }
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad(format!("component {k}: weight must be positive"));
            }
            total += c.weight;
            if c.mean.len() != grid.dims() || c.std.len() != grid.dims() {
                return bad(format!(
                    "component {k}: mean/std must have {} entries",
                    grid.dims()
                ));
            }
            for (dim, ((&m, &s), axis)) in c.mean.iter().zip(&c.std).zip(grid.axes()).enumerate() {
                if !(s > 0.0 && s.is_finite()) || !m.is_finite() {
                    return bad(format!("component {k}: std[{dim}] must be > 0"));
                }
                let outside = (axis.min - m).max(m - axis.max);
                if outside > 6.0 * s {
                    return bad(format!(
                        "component {k}: mean[{dim}] = {m} lies {outside} outside [{}, {}], more than 6 std",
                        axis.min, axis.max
                    ));
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("component weights sum to {total}, expected 1"));
        }
        Ok(())
    }
}

/// Draw `sample_count` in-bounds samples by rejection; deterministic per seed.
pub fn synthesize_ndd(spec: &NddSpec, grid: &ScenarioGrid) -> Result<Vec<Vec<f64>>> {
    spec.validate(grid)?;
    let mut rng = rng::rng_from_seed(spec.seed);
    let cumulative: Vec<f64> = spec
        .components
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap();
    let max_attempts = spec.sample_count.saturating_mul(10_000).max(1_000_000);
    let mut out = Vec::with_capacity(spec.sample_count);
    let mut attempts = 0usize;
    while out.len() < spec.sample_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidConfig(format!(
                "rejection sampling stalled after {attempts} draws"
            )));
        }
        let u: f64 = rng.random::<f64>() * total;
        let k = cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1);
        let comp = &spec.components[k];
        let x: Vec<f64> = comp
            .mean
            .iter()
            .zip(&comp.std)
            .map(|(&m, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect();
        if grid.contains(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

pub const NDD_CSV_HEADER: [&str; 2] = ["range_m", "range_rate_mps"];

pub fn write_samples_csv<W: std::io::Write>(writer: W, samples: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(NDD_CSV_HEADER)?;
    for s in samples {
        w.write_record(s.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != NDD_CSV_HEADER {
        return Err(Error::Parse(format!(
            "{}: expected header {}",
            path.display(),
            NDD_CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        out.push(
            row.map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), line + 2)))?,
        );
    }
    Ok(out)
}
