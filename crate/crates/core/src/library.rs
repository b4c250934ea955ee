//! Criticality, critical-scenario search and the testing scenario library.
//!
//! Criticality of a cell is `V = f_S · p`: surrogate event probability times
//! exposure. The library `Φ` is `{V > γ}`, found by multi-start descent on an
//! auxiliary objective followed by seed-fill over the criticality field.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mnp_ettc, simulate_encounter, ChallengeField, VehicleModel, DEFAULT_T_NORM};
use crate::error::{Error, Result};
use crate::exposure::ExposureModel;
use crate::grid::{Connectivity, OddConfig, ScenarioGrid};
use crate::numeric;
use crate::rng;

pub const LIBRARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityField {
    pub grid: ScenarioGrid,
    pub values: Vec<f64>,
    /// Aggregate surrogate event probability, `Σ V`.
    pub mu_s: f64,
}

pub fn criticality_field(
    challenge: &ChallengeField,
    exposure: &ExposureModel,
) -> Result<CriticalityField> {
    if challenge.grid != exposure.grid {
        return Err(Error::GridMismatch);
    }
    let values: Vec<f64> = challenge
        .values
        .iter()
        .zip(&exposure.mass)
        .map(|(f, p)| f * p)
        .collect();
    let mu_s = numeric::sum(values.iter().copied());
    Ok(CriticalityField {
        grid: challenge.grid.clone(),
        values,
        mu_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// `γ = m μ_S / N(X)`.
    #[default]
    Relaxed,
    /// Iterate `γ ← m μ_S / (N(X) - N(Φ(γ)))` from the relaxed value.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub gamma: f64,
    pub rule: ThresholdRule,
    pub iterations: usize,
    pub converged: bool,
}

/// Relaxed threshold `m μ_S / N(X)`.
pub fn threshold(m_factor: f64, mu_s: f64, total_cells: usize) -> Result<f64> {
    if !(m_factor >= 1.0 && m_factor.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "m_factor ({m_factor}) must be >= 1"
        )));
    }
    if !(mu_s >= 0.0) || total_cells == 0 {
        return Err(Error::InvalidParameter(
            "mu_S must be >= 0 and N(X) >= 1".into(),
        ));
    }
    if mu_s == 0.0 {
        log::warn!("mu_S = 0: threshold is 0 and the library will be empty");
    }
    Ok(m_factor * mu_s / total_cells as f64)
}

const FIXED_POINT_MAX_ITERS: usize = 100;

pub fn resolve_threshold(
    field: &CriticalityField,
    m_factor: f64,
    rule: ThresholdRule,
) -> Result<Threshold> {
    let n = field.grid.total_cells();
    let mut gamma = threshold(m_factor, field.mu_s, n)?;
    if rule == ThresholdRule::Relaxed {
        return Ok(Threshold {
            gamma,
            rule,
            iterations: 0,
            converged: true,
        });
    }
    let count = |g: f64| field.values.iter().filter(|&&v| v > g).count();
    let mut members = count(gamma);
    for it in 1..=FIXED_POINT_MAX_ITERS {
        let outside = n - members;
        if outside == 0 {
            return Ok(Threshold {
                gamma,
                rule,
                iterations: it,
                converged: false,
            });
        }
        let next = m_factor * field.mu_s / outside as f64;
        let next_members = count(next);
        gamma = next;
        if next_members == members {
            return Ok(Threshold {
                gamma,
                rule,
                iterations: it,
                converged: true,
            });
        }
        members = next_members;
    }
    Ok(Threshold {
        gamma,
        rule,
        iterations: FIXED_POINT_MAX_ITERS,
        converged: false,
    })
}

/// Search knobs for critical-scenario discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    pub start_count: usize,
    /// Weight of the exposure-distance term.
    pub weight: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    pub seed: u64,
    #[serde(default = "default_t_norm")]
    pub t_norm: f64,
    #[serde(default = "default_memoize")]
    pub memoize: bool,
}

fn default_t_norm() -> f64 {
    DEFAULT_T_NORM
}

fn default_memoize() -> bool {
    true
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            start_count: 100,
            weight: 1.0,
            connectivity: Connectivity::Axis,
            seed: 0,
            t_norm: DEFAULT_T_NORM,
            memoize: true,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.start_count == 0 {
            return Err(Error::InvalidConfig(
                "search.start_count must be >= 1".into(),
            ));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidConfig("search.weight must be >= 0".into()));
        }
        if !(self.t_norm > 0.0) {
            return Err(Error::InvalidConfig("search.t_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// `J(x) = mnpETTC(x) + w · d(x, Ω)` under the surrogate model.
pub struct AuxiliaryObjective<'a> {
    model: &'a VehicleModel,
    odd: &'a OddConfig,
    grid: &'a ScenarioGrid,
    zone_distance: Vec<f64>,
    weight: f64,
    t_norm: f64,
    seed: u64,
}

impl<'a> AuxiliaryObjective<'a> {
    pub fn new(
        model: &'a VehicleModel,
        odd: &'a OddConfig,
        exposure: &'a ExposureModel,
        weight: f64,
        t_norm: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            model,
            odd,
            grid: &exposure.grid,
            zone_distance: exposure.zone_distance_table()?,
            weight,
            t_norm,
            seed,
        })
    }

    pub fn evaluate(&self, cell: usize) -> f64 {
        let trace = simulate_encounter(
            self.model,
            &self.grid.point(cell),
            self.odd,
            rng::derive_seed(self.seed, cell as u64),
        );
        mnp_ettc(&trace, self.t_norm) + self.weight * self.zone_distance[cell]
    }
}

/// Single-scenario auxiliary objective.
pub fn auxiliary_objective(
    cell: usize,
    model: &VehicleModel,
    odd: &OddConfig,
    exposure: &ExposureModel,
    weight: f64,
    t_norm: f64,
    seed: u64,
) -> Result<f64> {
    let trace = simulate_encounter(
        model,
        &exposure.grid.point(cell),
        odd,
        rng::derive_seed(seed, cell as u64),
    );
    let d = exposure.distance_to_zone(&exposure.grid.point(cell))?;
    Ok(mnp_ettc(&trace, t_norm) + weight * d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub starts: Vec<usize>,
    /// Distinct descent terminals in ascending flat order.
    pub minima: Vec<usize>,
    /// Objective evaluations actually performed.
    pub evaluations: usize,
}

/// Shared per-cell cache; concurrent first evaluations of a cell yield the same value.
struct Memo<'f, F> {
    slots: Option<Vec<OnceLock<f64>>>,
    f: &'f F,
    calls: std::sync::atomic::AtomicUsize,
}

impl<F: Fn(usize) -> f64 + Sync> Memo<'_, F> {
    fn get(&self, cell: usize) -> f64 {
        let compute = || {
            self.calls
                .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            (self.f)(cell)
        };
        match &self.slots {
            Some(slots) => *slots[cell].get_or_init(compute),
            None => compute(),
        }
    }
}

/// Multi-start steepest descent over the grid neighborhood.
///
/// Starts are drawn uniformly (with replacement) from a seeded stream. Each
/// descent moves to the neighbor with the strictly smallest objective (ties to
/// the lower flat index) and stops when no neighbor improves.
pub fn multi_start_search<F>(
    grid: &ScenarioGrid,
    objective: &F,
    settings: &SearchSettings,
) -> SearchOutcome
where
    F: Fn(usize) -> f64 + Sync,
{
    let n = grid.total_cells();
    let mut start_rng = rng::stream_rng(settings.seed, 0);
    let starts: Vec<usize> = (0..settings.start_count)
        .map(|_| start_rng.random_range(0..n))
        .collect();
    let memo = Memo {
        slots: settings
            .memoize
            .then(|| (0..n).map(|_| OnceLock::new()).collect()),
        f: objective,
        calls: 0.into(),
    };
    let terminals: Vec<usize> = starts
        .par_iter()
        .map(|&s| descend(grid, &memo, s, settings.connectivity))
        .collect();
    let mut minima = terminals;
    minima.sort_unstable();
    minima.dedup();
    SearchOutcome {
        starts,
        minima,
        evaluations: memo.calls.into_inner(),
    }
}

fn descend<F: Fn(usize) -> f64 + Sync>(
    grid: &ScenarioGrid,
    memo: &Memo<'_, F>,
    start: usize,
    conn: Connectivity,
) -> usize {
    let mut here = start;
    let mut value = memo.get(here);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for nb in grid.neighbors_flat(here, conn) {
            let v = memo.get(nb);
            // neighbors are ascending, so strict `<` keeps the lower index on ties
            if v < value && best.is_none_or(|(_, bv)| v < bv) {
                best = Some((nb, v));
            }
        }
        match best {
            Some((nb, v)) => {
                here = nb;
                value = v;
            }
            None => return here,
        }
    }
}

/// Breadth-first fill from each qualifying seed through cells with `V > γ`.
pub fn seed_fill(
    field: &CriticalityField,
    seeds: &[usize],
    gamma: f64,
    connectivity: Connectivity,
) -> Vec<bool> {
    let grid = &field.grid;
    let critical = |c: usize| field.values[c] > gamma;
    let mut mask = vec![false; field.values.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if s >= mask.len() || mask[s] || !critical(s) {
            continue;
        }
        mask[s] = true;
        queue.push_back(s);
        while let Some(c) = queue.pop_front() {
            for nb in grid.neighbors_flat(c, connectivity) {
                if !mask[nb] && critical(nb) {
                    mask[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub surrogate: String,
    pub exposure: String,
    pub search: SearchSettings,
    pub threshold_rule: ThresholdRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    pub format_version: u32,
    pub exposure: ExposureModel,
    pub criticality: CriticalityField,
    /// Member flat indices, ascending.
    pub members: Vec<usize>,
    pub gamma: f64,
    /// Normalization factor `Σ_Φ V`.
    pub w: f64,
    pub m_factor: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Library {
    pub fn grid(&self) -> &ScenarioGrid {
        &self.criticality.grid
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.grid().total_cells()];
        for &m in &self.members {
            mask[m] = true;
        }
        mask
    }

    pub fn mu_s(&self) -> f64 {
        self.criticality.mu_s
    }
}

/// Seed-fill result compared against the exhaustive critical set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub format_version: u32,
    pub gamma: f64,
    pub exhaustive_count: usize,
    pub found_count: usize,
    pub missed: Vec<usize>,
    pub search_minima: Vec<usize>,
    pub qualifying_seeds: Vec<usize>,
    pub evaluations: usize,
}

impl CompletenessReport {
    pub fn is_complete(&self) -> bool {
        self.missed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLibrary {
    pub library: Library,
    pub completeness: Option<CompletenessReport>,
}

pub struct GenerationOptions<'a> {
    pub settings: &'a SearchSettings,
    pub m_factor: f64,
    pub rule: ThresholdRule,
    pub surrogate: &'a str,
    pub check_completeness: bool,
}

/// Threshold, multi-start search, filter terminals by `V > γ`, then seed-fill.
pub fn generate_library<F>(
    challenge: &ChallengeField,
    exposure: &ExposureModel,
    objective: &F,
    opts: &GenerationOptions<'_>,
) -> Result<GeneratedLibrary>
where
    F: Fn(usize) -> f64 + Sync,
{
    opts.settings.validate()?;
    let field = criticality_field(challenge, exposure)?;
    let th = resolve_threshold(&field, opts.m_factor, opts.rule)?;
    let gamma = th.gamma;
    let mut warnings = Vec::new();
    if !th.converged {
        warnings.push(format!(
            "fixed-point threshold did not converge after {} iterations",
            th.iterations
        ));
    }

    let search = multi_start_search(&field.grid, objective, opts.settings);
    let seeds: Vec<usize> = search
        .minima
        .iter()
        .copied()
        .filter(|&c| field.values[c] > gamma)
        .collect();
    let mask = seed_fill(&field, &seeds, gamma, opts.settings.connectivity);
    let members: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
    let w = numeric::sum(members.iter().map(|&c| field.values[c]));
    if members.is_empty() {
        warnings.push("library is empty: no critical scenario found above the threshold".into());
        log::warn!("empty library (mu_S = {}, gamma = {gamma})", field.mu_s);
    }

    let completeness = opts.check_completeness.then(|| {
        let exhaustive = crate::oracle::exact_library(&field, gamma);
        let missed: Vec<usize> = exhaustive.iter().copied().filter(|&c| !mask[c]).collect();
        CompletenessReport {
            format_version: LIBRARY_FORMAT_VERSION,
            gamma,
            exhaustive_count: exhaustive.len(),
            found_count: members.len(),
            missed,
            search_minima: search.minima.clone(),
            qualifying_seeds: seeds.clone(),
            evaluations: search.evaluations,
        }
    });
    if let Some(rep) = &completeness {
        if !rep.is_complete() {
            warnings.push(format!(
                "seed-fill missed {} critical cells",
                rep.missed.len()
            ));
        }
    }

    let exposure_desc = format!(
        "histogram(cells={}, zone_target={}, zone_cells={})",
        exposure.grid.total_cells(),
        exposure.zone_mass_target,
        exposure.zone_size()
    );
    Ok(GeneratedLibrary {
        library: Library {
            format_version: LIBRARY_FORMAT_VERSION,
            exposure: exposure.clone(),
            criticality: field,
            members,
            gamma,
            w,
            m_factor: opts.m_factor,
            provenance: Provenance {
                surrogate: opts.surrogate.to_string(),
                exposure: exposure_desc,
                search: opts.settings.clone(),
                threshold_rule: opts.rule,
            },
            warnings,
        },
        completeness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn line(cells: usize) -> ScenarioGrid {
        ScenarioGrid::from_axes(vec![Axis::new("x", 0.0, cells as f64, cells).unwrap()]).unwrap()
    }

    fn field_1d(values: Vec<f64>) -> CriticalityField {
        CriticalityField {
            grid: line(values.len()),
            mu_s: values.iter().sum(),
            values,
        }
    }

    fn uniform_exposure(grid: &ScenarioGrid) -> ExposureModel {
        let n = grid.total_cells();
        ExposureModel::from_masses(grid.clone(), vec![1.0 / n as f64; n], 0.5).unwrap()
    }

    #[test]
    fn criticality_is_product() {
        let g = line(4);
        let exp = ExposureModel::from_masses(g.clone(), vec![0.01, 0.49, 0.25, 0.25], 0.5).unwrap();
        let ch = ChallengeField::from_values(g.clone(), vec![0.5, 0.0, 1.0, 0.0], "t").unwrap();
        let f = criticality_field(&ch, &exp).unwrap();
        assert_eq!(f.values, vec![0.005, 0.0, 0.25, 0.0]);
        assert!((f.mu_s - 0.255).abs() < 1e-15);

        let ones = ChallengeField::from_values(g.clone(), vec![1.0; 4], "t").unwrap();
        let f = criticality_field(&ones, &exp).unwrap();
        assert_eq!(f.values, exp.mass);
        assert!((f.mu_s - 1.0).abs() < 1e-15);

        let zeros = ChallengeField::from_values(g.clone(), vec![0.0; 4], "t").unwrap();
        assert_eq!(criticality_field(&zeros, &exp).unwrap().mu_s, 0.0);

        let other = ChallengeField::from_values(line(3), vec![0.0; 3], "t").unwrap();
        assert_eq!(
            criticality_field(&other, &exp).unwrap_err(),
            Error::GridMismatch
        );
    }

    #[test]
    fn relaxed_threshold_arithmetic() {
        assert!((threshold(1.0, 0.02, 1000).unwrap() - 2e-5).abs() < 1e-20);
        assert_eq!(threshold(1.0, 0.0, 1000).unwrap(), 0.0);
        assert_eq!(
            threshold(2.0, 0.02, 1000).unwrap(),
            2.0 * threshold(1.0, 0.02, 1000).unwrap()
        );
        assert!(threshold(0.5, 0.02, 1000).is_err());
    }

    #[test]
    fn fixed_point_threshold_is_at_least_relaxed() {
        let f = field_1d(vec![0.0, 0.0, 0.5, 0.6, 0.0, 0.7, 0.0, 0.01, 0.02, 0.0]);
        let relaxed = resolve_threshold(&f, 1.0, ThresholdRule::Relaxed).unwrap();
        let fixed = resolve_threshold(&f, 1.0, ThresholdRule::FixedPoint).unwrap();
        assert!(fixed.converged);
        assert!(fixed.gamma >= relaxed.gamma);
        let members = f.values.iter().filter(|&&v| v > fixed.gamma).count();
        let expected = f.mu_s / (f.values.len() - members) as f64;
        assert!((fixed.gamma - expected).abs() < 1e-15);
    }

    #[test]
    fn seed_fill_examples() {
        let f = field_1d(vec![0.0, 0.0, 0.5, 0.6, 0.0, 0.7, 0.0]);
        let mask = seed_fill(&f, &[3], 0.4, Connectivity::Axis);
        assert_eq!(mask, vec![false, false, true, true, false, false, false]);
        let mask = seed_fill(&f, &[2, 5], 0.4, Connectivity::Axis);
        assert_eq!(mask, vec![false, false, true, true, false, true, false]);
        let mask = seed_fill(&f, &[0, 4], 0.4, Connectivity::Axis);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn descent_finds_single_basin() {
        let g = line(15);
        let j = |c: usize| (c as f64 - 9.0).powi(2);
        for seed in 0..5 {
            let s = SearchSettings {
                start_count: 3,
                seed,
                ..SearchSettings::default()
            };
            assert_eq!(multi_start_search(&g, &j, &s).minima, vec![9]);
        }
    }

    #[test]
    fn descent_finds_both_basins() {
        // Exhaustive table: local minima at 2 (J=0.1) and 7 (J=0.0), ridge at 4-5.
        let table = [0.5, 0.3, 0.1, 0.4, 0.9, 0.9, 0.2, 0.0, 0.3, 0.6];
        let locals: Vec<usize> = (0..10)
            .filter(|&i| {
                (i == 0 || table[i - 1] >= table[i]) && (i == 9 || table[i + 1] >= table[i])
            })
            .collect();
        assert_eq!(locals, vec![2, 7]);
        let g = line(10);
        let j = |c: usize| table[c];
        let s = SearchSettings {
            start_count: 40,
            seed: 1,
            ..SearchSettings::default()
        };
        let out = multi_start_search(&g, &j, &s);
        assert_eq!(out.minima, locals);
        assert!(out.evaluations <= 10);
        assert_eq!(out, multi_start_search(&g, &j, &s));
    }

    #[test]
    fn memoization_is_transparent() {
        let g = ScenarioGrid::from_axes(vec![
            Axis::new("a", 0.0, 1.0, 12).unwrap(),
            Axis::new("b", 0.0, 1.0, 9).unwrap(),
        ])
        .unwrap();
        let j = |c: usize| ((c * 7919) % 31) as f64;
        for conn in [Connectivity::Axis, Connectivity::Full] {
            let on = SearchSettings {
                start_count: 20,
                connectivity: conn,
                seed: 5,
                ..SearchSettings::default()
            };
            let off = SearchSettings {
                memoize: false,
                ..on.clone()
            };
            let a = multi_start_search(&g, &j, &on);
            let b = multi_start_search(&g, &j, &off);
            assert_eq!(a.minima, b.minima);
            assert_eq!(a.starts, b.starts);
            assert!(a.evaluations <= g.total_cells());
            assert!(b.evaluations >= a.evaluations);
        }
    }

    #[test]
    fn zero_challenge_gives_empty_library() {
        let g = line(8);
        let exp = uniform_exposure(&g);
        let ch = ChallengeField::from_values(g.clone(), vec![0.0; 8], "t").unwrap();
        let settings = SearchSettings {
            start_count: 4,
            ..SearchSettings::default()
        };
        let opts = GenerationOptions {
            settings: &settings,
            m_factor: 1.0,
            rule: ThresholdRule::Relaxed,
            surrogate: "none",
            check_completeness: true,
        };
        let out = generate_library(&ch, &exp, &|_| 0.0, &opts).unwrap();
        assert!(out.library.is_empty());
        assert_eq!(out.library.w, 0.0);
        assert_eq!(out.library.gamma, 0.0);
        assert!(!out.library.warnings.is_empty());
    }

    #[test]
    fn library_weight_is_member_sum() {
        let g = line(10);
        let exp = uniform_exposure(&g);
        let ch = ChallengeField::from_values(
            g.clone(),
            vec![0.0, 0.0, 0.3, 0.9, 1.0, 0.8, 0.0, 0.0, 0.0, 0.0],
            "t",
        )
        .unwrap();
        let settings = SearchSettings {
            start_count: 10,
            seed: 2,
            ..SearchSettings::default()
        };
        let opts = GenerationOptions {
            settings: &settings,
            m_factor: 1.0,
            rule: ThresholdRule::Relaxed,
            surrogate: "toy",
            check_completeness: true,
        };
        let j = |c: usize| 1.0 - ch.values[c];
        let out = generate_library(&ch, &exp, &j, &opts).unwrap();
        let lib = &out.library;
        let direct: f64 = lib.members.iter().map(|&c| lib.criticality.values[c]).sum();
        assert!((lib.w - direct).abs() <= 1e-12);
        assert!(lib.w > 0.0 && lib.w <= lib.mu_s() + 1e-15);
        assert!(out.completeness.unwrap().is_complete());
        assert_eq!(lib.members, vec![3, 4, 5]);
    }
}
