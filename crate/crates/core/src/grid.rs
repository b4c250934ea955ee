//! Discretized scenario space.
//!
//! A [`ScenarioGrid`] is a finite uniform grid over `d` bounded decision
//! variables. Cells are addressed either by a d-tuple of per-axis indices or
//! by a flat row-major index (the first axis varies slowest). The cut-in
//! encounter uses two axes: range `R` (m) and range rate `Ṙ` (m/s).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed operating parameters of the encounter and the grid bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddConfig {
    pub range_min: f64,
    pub range_max: f64,
    pub range_rate_min: f64,
    pub range_rate_max: f64,
    /// Cells along (range, range rate).
    pub cells_per_dim: [usize; 2],
    pub ego_speed: f64,
    pub sim_horizon: f64,
    pub sim_dt: f64,
    pub event_gap_threshold: f64,
}

impl Default for OddConfig {
    fn default() -> Self {
        Self {
            range_min: 0.0,
            range_max: 90.0,
            range_rate_min: -20.0,
            range_rate_max: 10.0,
            cells_per_dim: [61, 41],
            ego_speed: 30.0,
            sim_horizon: 15.0,
            sim_dt: 0.05,
            event_gap_threshold: 0.0,
        }
    }
}

impl OddConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            self.range_min,
            self.range_max,
            self.range_rate_min,
            self.range_rate_max,
            self.ego_speed,
            self.sim_horizon,
            self.sim_dt,
            self.event_gap_threshold,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all odd parameters must be finite".into());
        }
        if self.range_min >= self.range_max {
            return bad(format!(
                "range_min ({}) must be < range_max ({})",
                self.range_min, self.range_max
            ));
        }
        if self.range_rate_min >= self.range_rate_max {
            return bad(format!(
                "range_rate_min ({}) must be < range_rate_max ({})",
                self.range_rate_min, self.range_rate_max
            ));
        }
        for (dim, &c) in self.cells_per_dim.iter().enumerate() {
            if c < 2 {
                return bad(format!("cells_per_dim[{dim}] = {c} must be >= 2"));
            }
        }
        if self.sim_dt <= 0.0 {
            return bad(format!("sim_dt ({}) must be > 0", self.sim_dt));
        }
        if self.sim_horizon < 10.0 * self.sim_dt {
            return bad(format!(
                "sim_horizon ({}) must be >= 10 * sim_dt ({})",
                self.sim_horizon, self.sim_dt
            ));
        }
        if self.ego_speed <= 0.0 {
            return bad(format!("ego_speed ({}) must be > 0", self.ego_speed));
        }
        if self.event_gap_threshold < 0.0 {
            return bad(format!(
                "event_gap_threshold ({}) must be >= 0",
                self.event_gap_threshold
            ));
        }
        Ok(())
    }

    /// Number of integration steps over the horizon.
    pub fn step_count(&self) -> usize {
        (self.sim_horizon / self.sim_dt).round() as usize
    }
}

/// One bounded, uniformly binned dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, cells: usize) -> Result<Self> {
        let name = name.into();
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::InvalidConfig(format!(
                "axis {name}: min ({min}) must be < max ({max})"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidConfig(format!(
                "axis {name}: cells ({cells}) must be >= 2"
            )));
        }
        Ok(Self {
            name,
            min,
            max,
            cells,
        })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        self.width() / self.cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.cell_width()
    }

    /// Nearest center; equidistant coordinates go to the lower index.
    fn nearest(&self, x: f64) -> usize {
        let pos = (x - self.min) / self.cell_width() - 0.5;
        if pos <= 0.0 {
            return 0;
        }
        let lo = (pos.floor() as usize).min(self.cells - 1);
        if lo + 1 >= self.cells {
            return self.cells - 1;
        }
        let d_lo = (x - self.center(lo)).abs();
        let d_hi = (self.center(lo + 1) - x).abs();
        if d_hi < d_lo {
            lo + 1
        } else {
            lo
        }
    }
}

/// Neighborhood structure used by descent and seed-fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Face neighbors: at most `2d`.
    #[default]
    Axis,
    /// Face, edge and corner neighbors: at most `3^d - 1`.
    Full,
}

/// A single cell: its index tuple and physical center.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPoint {
    pub index: Vec<usize>,
    pub values: Vec<f64>,
}

impl ScenarioPoint {
    /// Range in meters (first axis).
    pub fn range(&self) -> f64 {
        self.values[0]
    }

    /// Range rate in m/s (second axis).
    pub fn range_rate(&self) -> f64 {
        self.values[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    axes: Vec<Axis>,
}

impl ScenarioGrid {
    pub fn from_axes(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one axis".into()));
        }
        for a in &axes {
            Axis::new(a.name.clone(), a.min, a.max, a.cells)?;
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.cells).collect()
    }

    pub fn total_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn cell_centers(&self, dim: usize) -> Vec<f64> {
        let a = &self.axes[dim];
        (0..a.cells).map(|i| a.center(i)).collect()
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        self.check_index(index)?;
        Ok(index
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.cells + i))
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        debug_assert!(flat < self.total_cells());
        let mut out = vec![0; self.dims()];
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = flat % a.cells;
            flat /= a.cells;
        }
        out
    }

    fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.dims() || index.iter().zip(&self.axes).any(|(&i, a)| i >= a.cells) {
            return Err(Error::IndexOutOfGrid {
                index: index.to_vec(),
                shape: self.shape(),
            });
        }
        Ok(())
    }

    pub fn point(&self, flat: usize) -> ScenarioPoint {
        let index = self.unflatten(flat);
        let values = index
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.center(i))
            .collect();
        ScenarioPoint { index, values }
    }

    /// Physical coordinates to the nearest cell index (ties toward the lower index).
    pub fn point_to_index(&self, coords: &[f64]) -> Result<Vec<usize>> {
        if coords.len() != self.dims() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coordinates, got {}",
                self.dims(),
                coords.len()
            )));
        }
        coords
            .iter()
            .zip(&self.axes)
            .enumerate()
            .map(|(dim, (&x, a))| {
                if !(x >= a.min && x <= a.max) {
                    return Err(Error::OutOfBounds {
                        dim,
                        value: x,
                        min: a.min,
                        max: a.max,
                    });
                }
                Ok(a.nearest(x))
            })
            .collect()
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.dims()
            && coords
                .iter()
                .zip(&self.axes)
                .all(|(&x, a)| x >= a.min && x <= a.max)
    }

    /// Per-dimension coordinates scaled by the bound width.
    pub fn normalized(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.axes)
            .map(|(&v, a)| (v - a.min) / a.width())
            .collect()
    }

    pub fn neighbors(
        &self,
        index: &[usize],
        connectivity: Connectivity,
    ) -> Result<Vec<Vec<usize>>> {
        let flat = self.flat_index(index)?;
        Ok(self
            .neighbors_flat(flat, connectivity)
            .into_iter()
            .map(|f| self.unflatten(f))
            .collect())
    }

    /// Neighbor flat indices in ascending order.
    pub fn neighbors_flat(&self, flat: usize, connectivity: Connectivity) -> Vec<usize> {
        let index = self.unflatten(flat);
        let d = self.dims();
        let mut out = Vec::new();
        match connectivity {
            Connectivity::Axis => {
                for dim in 0..d {
                    for delta in [-1i64, 1] {
                        if let Some(n) = self.offset(&index, dim, delta) {
                            out.push(n);
                        }
                    }
                }
            }
            Connectivity::Full => {
                let combos = 3usize.pow(d as u32);
                'combo: for code in 0..combos {
                    let mut c = code;
                    let mut cand = index.clone();
                    let mut is_self = true;
                    for (dim, slot) in cand.iter_mut().enumerate() {
                        let delta = (c % 3) as i64 - 1;
                        c /= 3;
                        if delta != 0 {
                            is_self = false;
                        }
                        let v = *slot as i64 + delta;
                        if v < 0 || v >= self.axes[dim].cells as i64 {
                            continue 'combo;
                        }
                        *slot = v as usize;
                    }
                    if !is_self {
                        out.push(self.flat_unchecked(&cand));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn offset(&self, index: &[usize], dim: usize, delta: i64) -> Option<usize> {
        let v = index[dim] as i64 + delta;
        if v < 0 || v >= self.axes[dim].cells as i64 {
            return None;
        }
        let mut cand = index.to_vec();
        cand[dim] = v as usize;
        Some(self.flat_unchecked(&cand))
    }

    fn flat_unchecked(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.cells + i)
    }
}

/// Range × range-rate grid for an operating domain.
pub fn build_grid(odd: &OddConfig) -> Result<ScenarioGrid> {
    odd.validate()?;
    ScenarioGrid::from_axes(vec![
        Axis::new(
            "range_m",
            odd.range_min,
            odd.range_max,
            odd.cells_per_dim[0],
        )?,
        Axis::new(
            "range_rate_mps",
            odd.range_rate_min,
            odd.range_rate_max,
            odd.cells_per_dim[1],
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(min: f64, max: f64, cells: usize) -> ScenarioGrid {
        ScenarioGrid::from_axes(vec![Axis::new("x", min, max, cells).unwrap()]).unwrap()
    }

    #[test]
    fn default_grid_has_2501_cells() {
        let g = build_grid(&OddConfig::default()).unwrap();
        assert_eq!(g.total_cells(), 61 * 41);
    }

    #[test]
    fn single_cell_axis_is_rejected() {
        let odd = OddConfig {
            cells_per_dim: [1, 41],
            ..OddConfig::default()
        };
        let err = build_grid(&odd).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(m) if m.contains("cells_per_dim[0]")));
    }

    #[test]
    fn short_horizon_is_rejected() {
        let odd = OddConfig {
            sim_horizon: 0.2,
            ..OddConfig::default()
        };
        assert!(build_grid(&odd).is_err());
    }

    #[test]
    fn centers_are_bin_midpoints() {
        let g = line(0.0, 10.0, 2);
        assert_eq!(g.cell_centers(0), vec![2.5, 7.5]);
    }

    #[test]
    fn point_to_index_ties_go_low() {
        let g = line(0.0, 10.0, 2);
        assert_eq!(g.point_to_index(&[2.5]).unwrap(), vec![0]);
        assert_eq!(g.point_to_index(&[5.0]).unwrap(), vec![0]);
        assert_eq!(g.point_to_index(&[5.0001]).unwrap(), vec![1]);
        assert_eq!(g.point_to_index(&[10.0]).unwrap(), vec![1]);
        assert_eq!(g.point_to_index(&[0.0]).unwrap(), vec![0]);
        match g.point_to_index(&[11.0]) {
            Err(Error::OutOfBounds { dim, .. }) => assert_eq!(dim, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn neighbor_counts() {
        let g = ScenarioGrid::from_axes(vec![
            Axis::new("a", 0.0, 1.0, 5).unwrap(),
            Axis::new("b", 0.0, 1.0, 5).unwrap(),
        ])
        .unwrap();
        assert_eq!(g.neighbors(&[2, 2], Connectivity::Axis).unwrap().len(), 4);
        assert_eq!(g.neighbors(&[2, 2], Connectivity::Full).unwrap().len(), 8);
        assert_eq!(g.neighbors(&[0, 0], Connectivity::Full).unwrap().len(), 3);
        assert_eq!(g.neighbors(&[0, 0], Connectivity::Axis).unwrap().len(), 2);
        assert!(matches!(
            g.neighbors(&[5, 0], Connectivity::Axis),
            Err(Error::IndexOutOfGrid { .. })
        ));
    }

    #[test]
    fn enumeration_visits_every_cell_once() {
        let g = build_grid(&OddConfig::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in 0..g.total_cells() {
            let idx = g.unflatten(f);
            assert_eq!(g.flat_index(&idx).unwrap(), f);
            assert!(seen.insert(idx));
        }
        assert_eq!(seen.len(), g.total_cells());
    }

    #[test]
    fn round_trip_every_center() {
        let g = build_grid(&OddConfig::default()).unwrap();
        for f in 0..g.total_cells() {
            let p = g.point(f);
            assert_eq!(g.point_to_index(&p.values).unwrap(), p.index);
        }
    }

    fn arb_grid() -> impl Strategy<Value = ScenarioGrid> {
        prop::collection::vec(2usize..7, 1..4).prop_map(|cells| {
            ScenarioGrid::from_axes(
                cells
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| Axis::new(format!("a{i}"), -1.0, 3.0, c).unwrap())
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn neighbors_are_symmetric(g in arb_grid(), full in any::<bool>(), seed in 0usize..10_000) {
            let conn = if full { Connectivity::Full } else { Connectivity::Axis };
            let i = seed % g.total_cells();
            let ns = g.neighbors_flat(i, conn);
            let mut dedup = ns.clone();
            dedup.dedup();
            prop_assert_eq!(&dedup, &ns);
            prop_assert!(!ns.contains(&i));
            let cap = match conn {
                Connectivity::Axis => 2 * g.dims(),
                Connectivity::Full => 3usize.pow(g.dims() as u32) - 1,
            };
            prop_assert!(ns.len() <= cap);
            for j in ns {
                prop_assert!(g.neighbors_flat(j, conn).contains(&i));
            }
        }

        #[test]
        fn centers_round_trip(g in arb_grid()) {
            for f in 0..g.total_cells() {
                let p = g.point(f);
                prop_assert_eq!(g.point_to_index(&p.values).unwrap(), p.index);
            }
        }
    }
}
