//! Testing scenario library generation for cut-in encounters.
//!
//! Pipeline: exposure frequency from naturalistic samples ([`exposure`]),
//! surrogate event probability per scenario ([`dynamics`]), criticality and
//! library search ([`library`]), importance-sampled evaluation of a vehicle
//! under test ([`evaluation`]), and an exhaustive grid [`oracle`] that
//! referees every estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod exposure;
pub mod grid;
pub mod library;
pub mod numeric;
pub mod oracle;
pub mod persist;
pub mod pipeline;
pub mod rng;

pub use config::ExperimentConfig;
pub use dynamics::{
    ettc, exhaustive_field, maneuver_challenge, mnp_ettc, simulate_encounter, ChallengeField,
    EncounterTrace, IdmGains, ModelKind, VehicleModel,
};
pub use error::{Error, Result};
pub use evaluation::{
    choose_epsilon, crude_mc_estimate, crude_policy, epsilon_greedy_policy, estimate_index,
    evaluate_policy, greedy_policy, required_tests, sample_scenarios, validate_importance_function,
    Confidence, EvaluationReport, PolicyKind, SamplingPolicy, TestOutcome,
};
pub use exposure::{fit_histogram, high_exposure_zone, synthesize_ndd, ExposureModel, NddSpec};
pub use grid::{build_grid, Connectivity, OddConfig, ScenarioGrid, ScenarioPoint};
pub use library::{
    criticality_field, generate_library, multi_start_search, seed_fill, threshold,
    CriticalityField, Library, SearchSettings, ThresholdRule,
};
pub use oracle::{exact_index, exact_library, exact_policy_variance, OracleResult, VarianceMode};
