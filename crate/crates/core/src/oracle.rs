//! Exhaustive ground truth on the finite grid.
//!
//! All sums run over cells in ascending flat order with compensation so that
//! results are stable across platforms and thread counts.

use serde::{Deserialize, Serialize};

use crate::dynamics::ChallengeField;
use crate::error::{Error, Result};
use crate::evaluation::SamplingPolicy;
use crate::exposure::ExposureModel;
use crate::library::{CriticalityField, Library};
use crate::numeric::{self, CompensatedSum};

pub const ORACLE_FORMAT_VERSION: u32 = 1;

/// How per-test outcomes are modelled when computing estimator variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Each test returns the exact event probability `f_A(x)`.
    Deterministic,
    /// Each test returns a Bernoulli draw with mean `f_A(x)`.
    Bernoulli,
}

/// Exact `μ = Σ f(x) p(x)`.
pub fn exact_index(field: &ChallengeField, exposure: &ExposureModel) -> Result<f64> {
    if field.grid != exposure.grid {
        return Err(Error::GridMismatch);
    }
    Ok(numeric::sum(
        field.values.iter().zip(&exposure.mass).map(|(f, p)| f * p),
    ))
}

/// First two moments of a single importance-sampled test term `p f / q`, `x ~ q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMoments {
    /// True index `μ`.
    pub mu: f64,
    /// `E_q[term]`, which equals `μ` when the policy covers every cell with `f p > 0`.
    pub mean: f64,
    /// `E_q[term²] - mean²`.
    pub variance: f64,
    /// `mean - μ`.
    pub bias: f64,
    /// Cells with `f p > 0` but `q = 0`.
    pub support_violations: Vec<usize>,
}

pub fn policy_moments(
    f_a: &ChallengeField,
    exposure: &ExposureModel,
    policy: &SamplingPolicy,
    mode: VarianceMode,
) -> Result<PolicyMoments> {
    if f_a.grid != exposure.grid || policy.grid != exposure.grid {
        return Err(Error::GridMismatch);
    }
    let mu = exact_index(f_a, exposure)?;
    let mut mean = CompensatedSum::new();
    let mut second = CompensatedSum::new();
    let mut support_violations = Vec::new();
    for (cell, ((&f, &p), &q)) in f_a
        .values
        .iter()
        .zip(&exposure.mass)
        .zip(&policy.q)
        .enumerate()
    {
        if q > 0.0 {
            let ratio = p / q;
            mean.add(ratio * f * q);
            second.add(match mode {
                VarianceMode::Deterministic => (ratio * f).powi(2) * q,
                VarianceMode::Bernoulli => ratio * ratio * f * q,
            });
        } else if f * p > 0.0 {
            support_violations.push(cell);
        }
    }
    let mean = mean.value();
    let variance = (second.value() - mean * mean).max(0.0);
    Ok(PolicyMoments {
        mu,
        mean,
        variance,
        bias: mean - mu,
        support_violations,
    })
}

/// Exact per-test variance `Σ (f p / q)² q - μ²` (or the Bernoulli-outcome form).
pub fn exact_policy_variance(
    f_a: &ChallengeField,
    exposure: &ExposureModel,
    policy: &SamplingPolicy,
    mode: VarianceMode,
) -> Result<f64> {
    let m = policy_moments(f_a, exposure, policy, mode)?;
    if let Some(&cell) = m.support_violations.first() {
        return Err(Error::SupportViolation { cell });
    }
    Ok(m.variance)
}

/// Exhaustive `{x : V(x) > γ}` in ascending flat order.
pub fn exact_library(field: &CriticalityField, gamma: f64) -> Vec<usize> {
    field
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > gamma)
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOracle {
    pub policy: String,
    pub epsilon: f64,
    pub sigma_sq_deterministic: f64,
    pub sigma_sq_bernoulli: f64,
    pub bias: f64,
    pub support_violations: usize,
}

impl PolicyOracle {
    pub fn evaluate(
        f_a: &ChallengeField,
        exposure: &ExposureModel,
        policy: &SamplingPolicy,
    ) -> Result<Self> {
        let det = policy_moments(f_a, exposure, policy, VarianceMode::Deterministic)?;
        let ber = policy_moments(f_a, exposure, policy, VarianceMode::Bernoulli)?;
        Ok(Self {
            policy: policy.kind.label().to_string(),
            epsilon: policy.epsilon,
            sigma_sq_deterministic: det.variance,
            sigma_sq_bernoulli: ber.variance,
            bias: det.bias,
            support_violations: det.support_violations.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub format_version: u32,
    pub mu: f64,
    pub mu_s: f64,
    pub gamma: f64,
    pub exhaustive_members: Vec<usize>,
    pub policies: Vec<PolicyOracle>,
}

impl OracleResult {
    /// Exact index under `f_a`, exhaustive critical set, and per-policy moments.
    pub fn compute(
        f_a: &ChallengeField,
        library: &Library,
        policies: &[SamplingPolicy],
    ) -> Result<Self> {
        let exposure = &library.exposure;
        Ok(Self {
            format_version: ORACLE_FORMAT_VERSION,
            mu: exact_index(f_a, exposure)?,
            mu_s: library.mu_s(),
            gamma: library.gamma,
            exhaustive_members: exact_library(&library.criticality, library.gamma),
            policies: policies
                .iter()
                .map(|p| PolicyOracle::evaluate(f_a, exposure, p))
                .collect::<Result<_>>()?,
        })
    }
}
