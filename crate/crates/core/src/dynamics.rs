//! Cut-in encounter simulation and time-to-collision surrogates.
//!
//! At `t = 0` a lead vehicle appears ahead of the ego at gap `R` with range
//! rate `Ṙ` and then holds constant speed. The ego follows a longitudinal
//! [`VehicleModel`]. State is integrated with explicit Euler at `sim_dt`:
//!
//! ```text
//! R    <- R + Ṙ dt
//! v_e  <- max(v_e + a_e dt, 0)
//! Ṙ    =  v_lead - v_e
//! u_r  =  -a_e            (lead acceleration is zero)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{OddConfig, ScenarioGrid, ScenarioPoint};
use crate::rng;

/// Below this magnitude the relative acceleration is treated as zero.
pub const ETTC_ACCEL_EPS: f64 = 1e-9;

pub const DEFAULT_T_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Coast through the reaction time, then brake at `max_decel` while closing.
    FullBrakeKinematic,
    /// Intelligent-driver-style car following, clamped to `[-max_decel, max_accel]`.
    IdmLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmGains {
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub time_headway: f64,
    /// Desired cruise speed; the ego initial speed when absent.
    #[serde(default)]
    pub desired_speed: Option<f64>,
    #[serde(default = "default_idm_exponent")]
    pub exponent: f64,
}

fn default_idm_exponent() -> f64 {
    4.0
}

impl Default for IdmGains {
    fn default() -> Self {
        Self {
            max_accel: 1.5,
            comfort_decel: 2.0,
            time_headway: 1.2,
            desired_speed: None,
            exponent: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleModel {
    pub kind: ModelKind,
    pub reaction_time: f64,
    /// Braking capability as a positive magnitude (m/s²).
    pub max_decel: f64,
    #[serde(default)]
    pub desired_gap: f64,
    #[serde(default)]
    pub idm: IdmGains,
    /// Std of per-step Gaussian acceleration noise; 0 is deterministic.
    #[serde(default)]
    pub noise_std: f64,
}

impl Default for VehicleModel {
    fn default() -> Self {
        Self::full_brake(1.0, 6.0)
    }
}

impl VehicleModel {
    pub fn full_brake(reaction_time: f64, max_decel: f64) -> Self {
        Self {
            kind: ModelKind::FullBrakeKinematic,
            reaction_time,
            max_decel,
            desired_gap: 2.0,
            idm: IdmGains::default(),
            noise_std: 0.0,
        }
    }

    pub fn idm_like(reaction_time: f64, max_decel: f64, gains: IdmGains) -> Self {
        Self {
            kind: ModelKind::IdmLike,
            reaction_time,
            max_decel,
            desired_gap: 2.0,
            idm: gains,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.reaction_time >= 0.0 && self.reaction_time.is_finite()) {
            return bad(format!(
                "reaction_time ({}) must be >= 0",
                self.reaction_time
            ));
        }
        if !(self.max_decel > 0.0 && self.max_decel.is_finite()) {
            return bad(format!("max_decel ({}) must be > 0", self.max_decel));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std ({}) must be >= 0", self.noise_std));
        }
        if self.desired_gap < 0.0 {
            return bad(format!("desired_gap ({}) must be >= 0", self.desired_gap));
        }
        if self.kind == ModelKind::IdmLike {
            let g = &self.idm;
            if !(g.max_accel > 0.0
                && g.comfort_decel > 0.0
                && g.time_headway >= 0.0
                && g.exponent > 0.0)
            {
                return bad("idm gains must be positive".into());
            }
            if matches!(g.desired_speed, Some(v) if v <= 0.0) {
                return bad("idm desired_speed must be > 0".into());
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_std == 0.0
    }

    pub fn descriptor(&self) -> String {
        let kind = match self.kind {
            ModelKind::FullBrakeKinematic => "full-brake-kinematic",
            ModelKind::IdmLike => "idm-like",
        };
        format!(
            "{kind}(reaction_time={}, max_decel={}, noise_std={})",
            self.reaction_time, self.max_decel, self.noise_std
        )
    }

    /// Commanded ego acceleration before noise.
    fn command(&self, t: f64, gap: f64, range_rate: f64, ego_speed: f64, cruise: f64) -> f64 {
        if t < self.reaction_time {
            return 0.0;
        }
        match self.kind {
            ModelKind::FullBrakeKinematic => {
                if range_rate < 0.0 {
                    -self.max_decel
                } else {
                    0.0
                }
            }
            ModelKind::IdmLike => {
                let g = &self.idm;
                let v0 = g.desired_speed.unwrap_or(cruise);
                let closing = -range_rate;
                let s_star = self.desired_gap
                    + (ego_speed * g.time_headway
                        + ego_speed * closing / (2.0 * (g.max_accel * g.comfort_decel).sqrt()))
                    .max(0.0);
                let s = gap.max(1e-3);
                let a =
                    g.max_accel * (1.0 - (ego_speed / v0).powf(g.exponent) - (s_star / s).powi(2));
                a.clamp(-self.max_decel, g.max_accel)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub range: f64,
    pub range_rate: f64,
    pub rel_accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncounterTrace {
    pub samples: Vec<TraceSample>,
    pub event_flag: bool,
    pub first_event_time: Option<f64>,
}

impl EncounterTrace {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "range_m", "range_rate_mps", "rel_accel_mps2"])?;
        for s in &self.samples {
            w.write_record([
                s.t.to_string(),
                s.range.to_string(),
                s.range_rate.to_string(),
                s.rel_accel.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate one encounter. Noise (if any) is drawn from a stream seeded by `seed`.
pub fn simulate_encounter(
    model: &VehicleModel,
    scenario: &ScenarioPoint,
    odd: &OddConfig,
    seed: u64,
) -> EncounterTrace {
    let steps = odd.step_count();
    let dt = odd.sim_dt;
    let lead_speed = odd.ego_speed + scenario.range_rate();
    let mut ego_speed = odd.ego_speed;
    let mut range = scenario.range();
    let mut noise = (!model.is_deterministic()).then(|| rng::rng_from_seed(seed));

    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let range_rate = lead_speed - ego_speed;
        let mut accel = model.command(t, range, range_rate, ego_speed, odd.ego_speed);
        if let Some(r) = noise.as_mut() {
            if t >= model.reaction_time {
                let z: f64 = r.sample(StandardNormal);
                accel += model.noise_std * z;
            }
        }
        samples.push(TraceSample {
            t,
            range,
            range_rate,
            rel_accel: -accel,
        });
        if range <= odd.event_gap_threshold {
            return EncounterTrace {
                samples,
                event_flag: true,
                first_event_time: Some(t),
            };
        }
        range += range_rate * dt;
        ego_speed = (ego_speed + accel * dt).max(0.0);
    }
    EncounterTrace {
        samples,
        event_flag: false,
        first_event_time: None,
    }
}

/// Enhanced time-to-collision under constant relative acceleration:
/// `(-Ṙ - sqrt(Ṙ² - 2 u_r R)) / u_r`, or `-R/Ṙ` when `|u_r|` is negligible.
/// `None` when no positive collision time exists.
pub fn ettc(range: f64, range_rate: f64, rel_accel: f64) -> Result<Option<f64>> {
    if !(range > 0.0) {
        return Err(Error::NonPositiveRange(range));
    }
    if rel_accel.abs() < ETTC_ACCEL_EPS {
        return Ok((range_rate < 0.0).then(|| -range / range_rate));
    }
    let disc = range_rate * range_rate - 2.0 * rel_accel * range;
    if disc < 0.0 {
        return Ok(None);
    }
    let root = disc.sqrt();
    // Same root, rearranged to avoid cancellation when -Ṙ ≈ sqrt(disc).
    let t = if range_rate <= 0.0 {
        2.0 * range / (root - range_rate)
    } else {
        (-range_rate - root) / rel_accel
    };
    Ok((t > 0.0 && t.is_finite()).then_some(t))
}

/// Minimal positive ETTC over a trace divided by `t_norm`, clamped to [0, 1].
/// Event traces score 0; traces without a positive ETTC score 1.
pub fn mnp_ettc(trace: &EncounterTrace, t_norm: f64) -> f64 {
    if trace.event_flag {
        return 0.0;
    }
    let min = trace
        .samples
        .iter()
        .filter(|s| s.range > 0.0)
        .filter_map(|s| ettc(s.range, s.range_rate, s.rel_accel).ok().flatten())
        .fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        (min / t_norm).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Fraction of `replications` runs that hit the event. Replication `i` is
/// seeded with `derive_seed(seed, i)`; deterministic models run once.
pub fn maneuver_challenge(
    model: &VehicleModel,
    scenario: &ScenarioPoint,
    odd: &OddConfig,
    replications: usize,
    seed: u64,
) -> f64 {
    let reps = if model.is_deterministic() {
        1
    } else {
        replications.max(1)
    };
    let events = (0..reps)
        .filter(|&i| {
            simulate_encounter(model, scenario, odd, rng::derive_seed(seed, i as u64)).event_flag
        })
        .count();
    events as f64 / reps as f64
}

/// Per-cell event probability of a model: `f_S` for the surrogate, `f_A` for the vehicle under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeField {
    pub grid: ScenarioGrid,
    pub values: Vec<f64>,
    pub model: String,
    pub replications: usize,
}

impl ChallengeField {
    pub fn from_values(
        grid: ScenarioGrid,
        values: Vec<f64>,
        model: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != grid.total_cells() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "challenge values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            model: model.into(),
            replications: 1,
        })
    }

    /// `k · f` for `k` in [0, 1].
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::InvalidParameter(format!("scale {k} outside [0, 1]")));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| k * v).collect(),
            model: format!("{} * {k}", self.model),
            replications: self.replications,
        })
    }
}

/// Cell `c` uses base seed `derive_seed(seed, c)`, so values do not depend on evaluation order.
pub fn exhaustive_field(
    model: &VehicleModel,
    grid: &ScenarioGrid,
    odd: &OddConfig,
    replications: usize,
    seed: u64,
) -> ChallengeField {
    let values = (0..grid.total_cells())
        .into_par_iter()
        .map(|c| {
            maneuver_challenge(
                model,
                &grid.point(c),
                odd,
                replications,
                rng::derive_seed(seed, c as u64),
            )
        })
        .collect();
    ChallengeField {
        grid: grid.clone(),
        values,
        model: model.descriptor(),
        replications: if model.is_deterministic() {
            1
        } else {
            replications.max(1)
        },
    }
}
