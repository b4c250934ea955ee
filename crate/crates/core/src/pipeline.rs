//! End-to-end stages driven by an [`ExperimentConfig`].

use crate::config::{EpsilonSetting, ExperimentConfig};
use crate::dynamics::{exhaustive_field, ChallengeField};
use crate::error::{Error, Result};
use crate::evaluation::{
    choose_epsilon, crude_policy, epsilon_greedy_policy, greedy_policy, EpsilonChoice, PolicyKind,
    SamplingPolicy,
};
use crate::exposure::{
    fit_histogram, read_samples_csv, synthesize_ndd, ExposureModel, HistogramFit,
};
use crate::library::{
    generate_library, AuxiliaryObjective, GeneratedLibrary, GenerationOptions, Library,
};

/// Naturalistic samples named by the config.
pub fn ndd_samples(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    match &cfg.ndd.csv {
        Some(path) => read_samples_csv(path),
        None => synthesize_ndd(&cfg.ndd_spec()?, &cfg.grid()?),
    }
}

pub fn fit_exposure(cfg: &ExperimentConfig, samples: &[Vec<f64>]) -> Result<HistogramFit> {
    let mut fit = fit_histogram(&cfg.grid()?, samples)?;
    if fit.model.zone_mass_target != cfg.ndd.zone_mass {
        fit.model = ExposureModel::from_masses(fit.model.grid, fit.model.mass, cfg.ndd.zone_mass)?;
    }
    Ok(fit)
}

pub fn exposure_model(cfg: &ExperimentConfig) -> Result<ExposureModel> {
    Ok(fit_exposure(cfg, &ndd_samples(cfg)?)?.model)
}

/// Surrogate challenge `f_S` on every cell.
pub fn surrogate_field(cfg: &ExperimentConfig) -> Result<ChallengeField> {
    Ok(exhaustive_field(
        &cfg.surrogate,
        &cfg.grid()?,
        &cfg.odd,
        cfg.replications,
        cfg.surrogate_seed(),
    ))
}

/// Challenge `f_A` of the vehicle under test on every cell.
pub fn cav_field(cfg: &ExperimentConfig) -> Result<ChallengeField> {
    Ok(exhaustive_field(
        &cfg.cav,
        &cfg.grid()?,
        &cfg.odd,
        cfg.replications,
        cfg.evaluation_seed(),
    ))
}

pub fn build_library(
    cfg: &ExperimentConfig,
    exposure: &ExposureModel,
    challenge: &ChallengeField,
    check_completeness: bool,
) -> Result<GeneratedLibrary> {
    let settings = cfg.search_settings();
    let objective = AuxiliaryObjective::new(
        &cfg.surrogate,
        &cfg.odd,
        exposure,
        settings.weight,
        settings.t_norm,
        cfg.surrogate_seed(),
    )?;
    let descriptor = cfg.surrogate.descriptor();
    let opts = GenerationOptions {
        settings: &settings,
        m_factor: cfg.m_factor,
        rule: cfg.search.threshold_rule,
        surrogate: &descriptor,
        check_completeness,
    };
    generate_library(challenge, exposure, &|c| objective.evaluate(c), &opts)
}

pub fn resolve_epsilon(cfg: &ExperimentConfig, library: &Library) -> Result<EpsilonChoice> {
    match cfg.epsilon {
        EpsilonSetting::Fixed(e) => Ok(EpsilonChoice {
            raw: e,
            epsilon: e,
            clamp: None,
        }),
        EpsilonSetting::Auto(_) => choose_epsilon(library.w, library.mu_s(), cfg.epsilon_bounds()),
    }
}

/// Policy of the given kind plus the epsilon choice behind it, if any.
pub fn build_policy(
    cfg: &ExperimentConfig,
    library: &Library,
    kind: PolicyKind,
) -> Result<(SamplingPolicy, Option<EpsilonChoice>)> {
    if library.grid() != &cfg.grid()? {
        return Err(Error::GridMismatch);
    }
    match kind {
        PolicyKind::Greedy => Ok((greedy_policy(library)?, None)),
        PolicyKind::Crude => Ok((crude_policy(&library.exposure), None)),
        PolicyKind::EpsilonGreedy => {
            let choice = resolve_epsilon(cfg, library)?;
            Ok((
                epsilon_greedy_policy(library, choice.epsilon)?,
                Some(choice),
            ))
        }
    }
}
