//! Importance-sampled evaluation of a vehicle model against a library.
//!
//! A [`SamplingPolicy`] is the importance function `q` over grid cells. Tests
//! are run at scenarios drawn from `q` and the index is estimated as
//! `μ̂ = (1/n) Σ p(x_i)/q(x_i) · f_A(x_i)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{maneuver_challenge, VehicleModel};
use crate::error::{Error, Result};
use crate::exposure::ExposureModel;
use crate::grid::{OddConfig, ScenarioGrid};
use crate::library::Library;
use crate::numeric::{self, CompensatedSum};
use crate::rng;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPSILON_BOUNDS: (f64, f64) = (0.01, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Greedy,
    EpsilonGreedy,
    Crude,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::EpsilonGreedy => "epsilon-greedy",
            PolicyKind::Crude => "crude",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub grid: ScenarioGrid,
    pub q: Vec<f64>,
    pub kind: PolicyKind,
    pub epsilon: f64,
}

/// `q = V / W` on the library, 0 elsewhere.
pub fn greedy_policy(library: &Library) -> Result<SamplingPolicy> {
    if library.is_empty() || !(library.w > 0.0) {
        return Err(Error::EmptyLibrary);
    }
    let v = &library.criticality.values;
    let mut q = vec![0.0; v.len()];
    for &m in &library.members {
        q[m] = v[m] / library.w;
    }
    Ok(SamplingPolicy {
        grid: library.grid().clone(),
        q,
        kind: PolicyKind::Greedy,
        epsilon: 0.0,
    })
}

/// `q = (1-ε) V / W` on the library, `ε / (N(X) - N(Φ))` elsewhere.
pub fn epsilon_greedy_policy(library: &Library, epsilon: f64) -> Result<SamplingPolicy> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::EpsilonOutOfRange(epsilon));
    }
    if library.is_empty() || !(library.w > 0.0) {
        return Err(Error::EmptyLibrary);
    }
    let total = library.grid().total_cells();
    let outside = total - library.len();
    if outside == 0 {
        return Err(Error::LibraryCoversGrid);
    }
    let explore = epsilon / outside as f64;
    let v = &library.criticality.values;
    let mut q = vec![explore; total];
    for &m in &library.members {
        q[m] = (1.0 - epsilon) * v[m] / library.w;
    }
    Ok(SamplingPolicy {
        grid: library.grid().clone(),
        q,
        kind: PolicyKind::EpsilonGreedy,
        epsilon,
    })
}

/// Naturalistic sampling, `q = p`.
pub fn crude_policy(exposure: &ExposureModel) -> SamplingPolicy {
    SamplingPolicy {
        grid: exposure.grid.clone(),
        q: exposure.mass.clone(),
        kind: PolicyKind::Crude,
        epsilon: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonClamp {
    Floor,
    Ceiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonChoice {
    pub raw: f64,
    pub epsilon: f64,
    pub clamp: Option<EpsilonClamp>,
}

/// `ε = 1 - W / μ_S`, clamped into `bounds`.
pub fn choose_epsilon(w: f64, mu_s: f64, bounds: (f64, f64)) -> Result<EpsilonChoice> {
    if !(mu_s > 0.0) {
        return Err(Error::ZeroChallenge);
    }
    let (lo, hi) = bounds;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon bounds ({lo}, {hi}) invalid"
        )));
    }
    let raw = 1.0 - w / mu_s;
    let (epsilon, clamp) = if raw < lo {
        (lo, Some(EpsilonClamp::Floor))
    } else if raw > hi {
        (hi, Some(EpsilonClamp::Ceiling))
    } else {
        (raw, None)
    };
    if clamp.is_some() {
        log::info!("epsilon {raw} clamped to {epsilon}");
    }
    Ok(EpsilonChoice {
        raw,
        epsilon,
        clamp,
    })
}

/// `n` inverse-CDF draws over the flat cell order.
pub fn sample_scenarios(policy: &SamplingPolicy, n: usize, seed: u64) -> Vec<usize> {
    let mut acc = CompensatedSum::new();
    let cdf: Vec<f64> = policy
        .q
        .iter()
        .map(|&q| {
            acc.add(q);
            acc.value()
        })
        .collect();
    let total = acc.value();
    let last = policy.q.iter().rposition(|&q| q > 0.0).unwrap_or(0);
    let mut r = rng::rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let target = r.random::<f64>() * total;
            cdf.partition_point(|&c| c <= target).min(last)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub cell: usize,
    /// Event indicator, or event fraction over replications.
    pub value: f64,
    pub seed: u64,
}

/// Test the model at each sampled cell. Test `i` runs with seed `derive_seed(seed, i)`.
pub fn run_tests(
    model: &VehicleModel,
    grid: &ScenarioGrid,
    odd: &OddConfig,
    cells: &[usize],
    replications: usize,
    seed: u64,
) -> Vec<TestOutcome> {
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &cell)| {
            let s = rng::derive_seed(seed, i as u64);
            TestOutcome {
                cell,
                value: maneuver_challenge(model, &grid.point(cell), odd, replications, s),
                seed: s,
            }
        })
        .collect()
}

/// Two-sided normal quantile for the supported confidence levels.
pub fn z_alpha(alpha: f64) -> Result<f64> {
    const TABLE: [(f64, f64); 6] = [
        (0.2, 1.2816),
        (0.1, 1.6449),
        (0.05, 1.96),
        (0.02, 2.3263),
        (0.01, 2.5758),
        (0.001, 3.2905),
    ];
    TABLE
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, z)| z)
        .ok_or(Error::UnsupportedAlpha(alpha))
}

/// Tests needed for relative half-width `beta`: `ceil(z² σ² / (β² μ²))`, at least 1.
pub fn required_tests(z_alpha: f64, beta: f64, mu: f64, sigma_sq: f64) -> Result<u64> {
    if !(beta > 0.0) || !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "required_tests needs beta > 0 and mu > 0 (beta = {beta}, mu = {mu})"
        )));
    }
    if !(sigma_sq >= 0.0) {
        return Err(Error::InvalidParameter("sigma_sq must be >= 0".into()));
    }
    let n = (z_alpha * z_alpha * sigma_sq / (beta * beta * mu * mu)).ceil();
    Ok(if n.is_finite() {
        (n as u64).max(1)
    } else {
        u64::MAX
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Confidence {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_choice: Option<EpsilonChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub policy: PolicyDescriptor,
    pub mu_hat: f64,
    pub sigma_sq_hat: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub beta: f64,
    pub z_alpha: f64,
    /// Post-hoc test count from this run's statistics; absent when `μ̂ = 0`.
    pub required_n: Option<u64>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub library_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEstimate {
    pub report: EvaluationReport,
    /// Per-test terms `p/q · f_A` in draw order.
    pub terms: Vec<f64>,
}

fn summarize(
    policy: PolicyDescriptor,
    mu_hat: f64,
    sigma_sq_hat: f64,
    n: usize,
    conf: Confidence,
    seed: u64,
) -> Result<EvaluationReport> {
    let z = z_alpha(conf.alpha)?;
    let half = z * sigma_sq_hat.sqrt() / (n as f64).sqrt();
    let required_n = if mu_hat > 0.0 {
        Some(required_tests(z, conf.beta, mu_hat, sigma_sq_hat)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        format_version: REPORT_FORMAT_VERSION,
        policy,
        mu_hat,
        sigma_sq_hat,
        n,
        ci_low: mu_hat - half,
        ci_high: mu_hat + half,
        alpha: conf.alpha,
        beta: conf.beta,
        z_alpha: z,
        required_n,
        seed,
        config_hash: None,
        library_hash: None,
    })
}

/// Importance-sampled estimate with sample variance and a normal CI.
pub fn estimate_index(
    outcomes: &[TestOutcome],
    policy: &SamplingPolicy,
    exposure: &ExposureModel,
    conf: Confidence,
    seed: u64,
) -> Result<IndexEstimate> {
    if policy.grid != exposure.grid {
        return Err(Error::GridMismatch);
    }
    if outcomes.is_empty() {
        return Err(Error::InvalidParameter("no test outcomes".into()));
    }
    let mut terms = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let q = policy.q[o.cell];
        if !(q > 0.0) {
            return Err(Error::SupportViolation { cell: o.cell });
        }
        terms.push(exposure.mass[o.cell] / q * o.value);
    }
    let n = terms.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (outcomes[i].cell, i));
    let mu_hat = numeric::sum(order.iter().map(|&i| terms[i])) / n as f64;
    let sigma_sq_hat = if n > 1 {
        numeric::sum(order.iter().map(|&i| (terms[i] - mu_hat).powi(2))) / (n - 1) as f64
    } else {
        0.0
    };
    let report = summarize(
        PolicyDescriptor {
            kind: policy.kind,
            epsilon: policy.epsilon,
            epsilon_choice: None,
        },
        mu_hat,
        sigma_sq_hat,
        n,
        conf,
        seed,
    )?;
    Ok(IndexEstimate { report, terms })
}

/// Sample, test and estimate. Draws use `derive_seed(seed, 0)`; tests use base `derive_seed(seed, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    policy: &SamplingPolicy,
    exposure: &ExposureModel,
    model: &VehicleModel,
    odd: &OddConfig,
    n: usize,
    replications: usize,
    conf: Confidence,
    seed: u64,
) -> Result<IndexEstimate> {
    let cells = sample_scenarios(policy, n, rng::derive_seed(seed, 0));
    let outcomes = run_tests(
        model,
        &policy.grid,
        odd,
        &cells,
        replications,
        rng::derive_seed(seed, 1),
    );
    estimate_index(&outcomes, policy, exposure, conf, seed)
}

/// Naturalistic baseline: `m / n` with binomial variance `μ̂ (1 - μ̂)`.
pub fn crude_mc_estimate(
    exposure: &ExposureModel,
    model: &VehicleModel,
    odd: &OddConfig,
    n: usize,
    conf: Confidence,
    seed: u64,
) -> Result<EvaluationReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let policy = crude_policy(exposure);
    let cells = sample_scenarios(&policy, n, rng::derive_seed(seed, 0));
    let outcomes = run_tests(
        model,
        &exposure.grid,
        odd,
        &cells,
        1,
        rng::derive_seed(seed, 1),
    );
    let events = numeric::sum(outcomes.iter().map(|o| o.value));
    let mu_hat = events / n as f64;
    summarize(
        PolicyDescriptor {
            kind: PolicyKind::Crude,
            epsilon: 0.0,
            epsilon_choice: None,
        },
        mu_hat,
        mu_hat * (1.0 - mu_hat),
        n,
        conf,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    OutOfUnitInterval,
    MissingSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub mass_deviation: f64,
    pub violations: Vec<(usize, ViolationKind)>,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.mass_deviation <= 1e-9
    }
}

/// Checks `q ∈ [0,1]`, `Σ q = 1` and `p > 0 ⇒ q > 0`.
pub fn validate_importance_function(
    policy: &SamplingPolicy,
    exposure: &ExposureModel,
) -> Result<Validity> {
    if policy.grid != exposure.grid {
        return Err(Error::GridMismatch);
    }
    let mut violations = Vec::new();
    for (cell, (&q, &p)) in policy.q.iter().zip(&exposure.mass).enumerate() {
        if !(0.0..=1.0).contains(&q) {
            violations.push((cell, ViolationKind::OutOfUnitInterval));
        } else if p > 0.0 && q <= 0.0 {
            violations.push((cell, ViolationKind::MissingSupport));
        }
    }
    Ok(Validity {
        mass_deviation: (numeric::sum(policy.q.iter().copied()) - 1.0).abs(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::library::{CriticalityField, Provenance, SearchSettings, ThresholdRule};

    fn line(cells: usize) -> ScenarioGrid {
        ScenarioGrid::from_axes(vec![Axis::new("x", 0.0, cells as f64, cells).unwrap()]).unwrap()
    }

    /// 12-cell library with V = 0.2 at cell 0 and 0.3 at cell 1.
    fn toy_library() -> Library {
        let g = line(12);
        let mut values = vec![0.0; 12];
        values[0] = 0.2;
        values[1] = 0.3;
        let exposure = ExposureModel::from_masses(g.clone(), vec![1.0 / 12.0; 12], 0.5).unwrap();
        Library {
            format_version: 1,
            exposure,
            criticality: CriticalityField {
                grid: g,
                values,
                mu_s: 0.5,
            },
            members: vec![0, 1],
            gamma: 0.1,
            w: 0.5,
            m_factor: 1.0,
            provenance: Provenance {
                surrogate: "toy".into(),
                exposure: "toy".into(),
                search: SearchSettings::default(),
                threshold_rule: ThresholdRule::Relaxed,
            },
            warnings: vec![],
        }
    }

    #[test]
    fn greedy_masses() {
        let lib = toy_library();
        let pol = greedy_policy(&lib).unwrap();
        assert!((pol.q[0] - 0.4).abs() < 1e-15);
        assert!((pol.q[1] - 0.6).abs() < 1e-15);
        assert!(pol.q[2..].iter().all(|&q| q == 0.0));
        assert!((pol.q.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let mut single = toy_library();
        single.members = vec![1];
        single.w = 0.3;
        assert_eq!(greedy_policy(&single).unwrap().q[1], 1.0);

        let mut empty = toy_library();
        empty.members.clear();
        empty.w = 0.0;
        assert_eq!(greedy_policy(&empty).unwrap_err(), Error::EmptyLibrary);
    }

    #[test]
    fn epsilon_greedy_masses() {
        let lib = toy_library();
        let pol = epsilon_greedy_policy(&lib, 0.1).unwrap();
        assert!((pol.q[0] - 0.36).abs() < 1e-15);
        assert!((pol.q[1] - 0.54).abs() < 1e-15);
        assert!(pol.q[2..].iter().all(|&q| (q - 0.01).abs() < 1e-15));
        assert!((pol.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let tiny = epsilon_greedy_policy(&lib, 1e-12).unwrap();
        let greedy = greedy_policy(&lib).unwrap();
        assert!((tiny.q[0] - greedy.q[0]).abs() < 1e-11);

        assert_eq!(
            epsilon_greedy_policy(&lib, 0.0).unwrap_err(),
            Error::EpsilonOutOfRange(0.0)
        );
        assert_eq!(
            epsilon_greedy_policy(&lib, 1.0).unwrap_err(),
            Error::EpsilonOutOfRange(1.0)
        );
        let mut full = toy_library();
        full.members = (0..12).collect();
        assert_eq!(
            epsilon_greedy_policy(&full, 0.1).unwrap_err(),
            Error::LibraryCoversGrid
        );
    }

    #[test]
    fn epsilon_choice_and_clamps() {
        let c = choose_epsilon(0.008, 0.01, DEFAULT_EPSILON_BOUNDS).unwrap();
        assert!((c.epsilon - 0.2).abs() < 1e-12);
        assert_eq!(c.clamp, None);
        let c = choose_epsilon(0.01, 0.01, DEFAULT_EPSILON_BOUNDS).unwrap();
        assert_eq!(
            (c.raw, c.epsilon, c.clamp),
            (0.0, 0.01, Some(EpsilonClamp::Floor))
        );
        let c = choose_epsilon(0.004, 0.01, DEFAULT_EPSILON_BOUNDS).unwrap();
        assert!((c.raw - 0.6).abs() < 1e-12);
        assert_eq!((c.epsilon, c.clamp), (0.5, Some(EpsilonClamp::Ceiling)));
        assert_eq!(
            choose_epsilon(0.0, 0.0, DEFAULT_EPSILON_BOUNDS).unwrap_err(),
            Error::ZeroChallenge
        );
    }

    #[test]
    fn sampling_examples() {
        let g = line(5);
        let mut q = vec![0.0; 5];
        q[3] = 1.0;
        let pol = SamplingPolicy {
            grid: g.clone(),
            q,
            kind: PolicyKind::Greedy,
            epsilon: 0.0,
        };
        assert!(sample_scenarios(&pol, 100, 1).iter().all(|&c| c == 3));

        let q = vec![0.1, 0.0, 0.45, 0.05, 0.4];
        let pol = SamplingPolicy {
            grid: g,
            q: q.clone(),
            kind: PolicyKind::EpsilonGreedy,
            epsilon: 0.1,
        };
        let n = 100_000;
        let draws = sample_scenarios(&pol, n, 9);
        assert_eq!(draws, sample_scenarios(&pol, n, 9));
        let mut counts = [0usize; 5];
        for d in draws {
            counts[d] += 1;
        }
        assert_eq!(counts[1], 0);
        for (c, &qq) in counts.iter().zip(&q) {
            let freq = *c as f64 / n as f64;
            assert!((freq - qq).abs() <= 4.0 * (qq * (1.0 - qq) / n as f64).sqrt());
        }
    }

    #[test]
    fn estimator_edge_cases() {
        let g = line(2);
        let exposure = ExposureModel::from_masses(g.clone(), vec![0.25, 0.75], 0.5).unwrap();
        let crude = crude_policy(&exposure);
        let one = [TestOutcome {
            cell: 0,
            value: 1.0,
            seed: 0,
        }];
        let est = estimate_index(&one, &crude, &exposure, Confidence::default(), 0).unwrap();
        assert_eq!(est.report.mu_hat, 1.0);
        assert_eq!(est.report.sigma_sq_hat, 0.0);
        assert_eq!(est.report.required_n, Some(1));

        let zeros: Vec<TestOutcome> = (0..10)
            .map(|i| TestOutcome {
                cell: i % 2,
                value: 0.0,
                seed: 0,
            })
            .collect();
        let est = estimate_index(&zeros, &crude, &exposure, Confidence::default(), 0).unwrap();
        assert_eq!((est.report.mu_hat, est.report.sigma_sq_hat), (0.0, 0.0));
        assert_eq!(est.report.required_n, None);

        let greedy = SamplingPolicy {
            grid: g,
            q: vec![1.0, 0.0],
            kind: PolicyKind::Greedy,
            epsilon: 0.0,
        };
        let outside = [TestOutcome {
            cell: 1,
            value: 1.0,
            seed: 0,
        }];
        assert_eq!(
            estimate_index(&outside, &greedy, &exposure, Confidence::default(), 0).unwrap_err(),
            Error::SupportViolation { cell: 1 }
        );
    }

    #[test]
    fn confidence_interval_brackets_estimate() {
        let g = line(2);
        let exposure = ExposureModel::from_masses(g, vec![0.5, 0.5], 0.5).unwrap();
        let crude = crude_policy(&exposure);
        let outs: Vec<TestOutcome> = (0..20)
            .map(|i| TestOutcome {
                cell: i % 2,
                value: (i % 3 == 0) as u8 as f64,
                seed: 0,
            })
            .collect();
        let r = estimate_index(&outs, &crude, &exposure, Confidence::default(), 0)
            .unwrap()
            .report;
        assert!(r.ci_low <= r.mu_hat && r.mu_hat <= r.ci_high);
        assert!(r.ci_low < r.ci_high);
        assert_eq!(r.z_alpha, 1.96);
    }

    #[test]
    fn required_tests_examples() {
        let mu = 0.01;
        assert_eq!(
            required_tests(1.96, 0.2, mu, mu * (1.0 - mu)).unwrap(),
            9508
        );
        assert_eq!(required_tests(1.96, 0.2, mu, 0.0).unwrap(), 1);
        let a = required_tests(1.96, 0.2, 0.05, 0.3).unwrap();
        let b = required_tests(1.96, 0.1, 0.05, 0.3).unwrap();
        assert!(b.abs_diff(4 * a) <= 4, "{a} {b}");
        assert!(required_tests(1.96, 0.0, mu, 0.1).is_err());
        assert!(required_tests(1.96, 0.2, 0.0, 0.1).is_err());
    }

    #[test]
    fn z_table() {
        assert_eq!(z_alpha(0.05).unwrap(), 1.96);
        assert_eq!(z_alpha(0.01).unwrap(), 2.5758);
        assert_eq!(z_alpha(0.07).unwrap_err(), Error::UnsupportedAlpha(0.07));
    }

    #[test]
    fn validity_checks() {
        let lib = toy_library();
        let eg = epsilon_greedy_policy(&lib, 0.2).unwrap();
        assert!(validate_importance_function(&eg, &lib.exposure)
            .unwrap()
            .is_valid());
        assert!(
            validate_importance_function(&crude_policy(&lib.exposure), &lib.exposure)
                .unwrap()
                .is_valid()
        );
        let g = greedy_policy(&lib).unwrap();
        let v = validate_importance_function(&g, &lib.exposure).unwrap();
        assert!(!v.is_valid());
        assert_eq!(v.violations.len(), 10);
        assert!(v
            .violations
            .iter()
            .all(|(_, k)| *k == ViolationKind::MissingSupport));
    }
}
