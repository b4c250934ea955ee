use std::sync::OnceLock;

use scenlib_core::library::Library;
use scenlib_core::oracle::policy_moments;
use scenlib_core::{
    crude_mc_estimate, exact_index, exact_policy_variance, greedy_policy, pipeline, ChallengeField,
    Confidence, ExperimentConfig, ExposureModel, PolicyKind, VarianceMode,
};

struct Default {
    cfg: ExperimentConfig,
    exposure: ExposureModel,
    f_s: ChallengeField,
    library: Library,
}

fn defaults() -> &'static Default {
    static D: OnceLock<Default> = OnceLock::new();
    D.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let exposure = pipeline::exposure_model(&cfg).unwrap();
        let f_s = pipeline::surrogate_field(&cfg).unwrap();
        let library = pipeline::build_library(&cfg, &exposure, &f_s, false)
            .unwrap()
            .library;
        Default {
            cfg,
            exposure,
            f_s,
            library,
        }
    })
}

#[test]
fn crude_estimate_agrees_with_exact_index() {
    let d = defaults();
    let f_a = pipeline::cav_field(&d.cfg).unwrap();
    let mu = exact_index(&f_a, &d.exposure).unwrap();
    let n = 100_000;
    let report = crude_mc_estimate(
        &d.exposure,
        &d.cfg.cav,
        &d.cfg.odd,
        n,
        Confidence::default(),
        17,
    )
    .unwrap();
    let se = (mu * (1.0 - mu) / n as f64).sqrt();
    assert!(
        (report.mu_hat - mu).abs() <= 4.0 * se,
        "{} vs {mu}",
        report.mu_hat
    );
}

#[test]
fn library_policy_beats_crude_with_identical_vehicle() {
    let d = defaults();
    let crude = pipeline::build_policy(&d.cfg, &d.library, PolicyKind::Crude)
        .unwrap()
        .0;
    let eg = pipeline::build_policy(&d.cfg, &d.library, PolicyKind::EpsilonGreedy)
        .unwrap()
        .0;
    let s_crude =
        exact_policy_variance(&d.f_s, &d.exposure, &crude, VarianceMode::Deterministic).unwrap();
    let s_eg =
        exact_policy_variance(&d.f_s, &d.exposure, &eg, VarianceMode::Deterministic).unwrap();
    assert!(s_crude >= s_eg);
}

#[test]
fn library_policy_beats_crude_with_dissimilar_vehicle() {
    let d = defaults();
    let f_a = pipeline::cav_field(&d.cfg).unwrap();
    let crude = pipeline::build_policy(&d.cfg, &d.library, PolicyKind::Crude)
        .unwrap()
        .0;
    let eg = pipeline::build_policy(&d.cfg, &d.library, PolicyKind::EpsilonGreedy)
        .unwrap()
        .0;
    let s_crude =
        exact_policy_variance(&f_a, &d.exposure, &crude, VarianceMode::Deterministic).unwrap();
    let s_eg = exact_policy_variance(&f_a, &d.exposure, &eg, VarianceMode::Deterministic).unwrap();
    assert!(s_eg <= s_crude);
}

#[test]
fn greedy_with_identical_vehicle_is_exact() {
    let d = defaults();
    let greedy = greedy_policy(&d.library).unwrap();
    let m = policy_moments(&d.f_s, &d.exposure, &greedy, VarianceMode::Deterministic).unwrap();
    assert!(m.support_violations.is_empty());
    assert!(m.bias.abs() <= 1e-15);
    assert!(m.variance <= 1e-20);
}

#[test]
fn greedy_bias_is_reported_when_vehicle_fails_outside_library() {
    let d = defaults();
    let greedy = greedy_policy(&d.library).unwrap();
    let mask = d.library.member_mask();
    let outside = (0..mask.len())
        .find(|&c| !mask[c] && d.exposure.mass[c] > 0.0)
        .unwrap();
    let mut values = d.f_s.values.clone();
    values[outside] = 1.0;
    let f_a = ChallengeField::from_values(d.f_s.grid.clone(), values, "perturbed").unwrap();
    let m = policy_moments(&f_a, &d.exposure, &greedy, VarianceMode::Deterministic).unwrap();
    assert_eq!(m.support_violations, vec![outside]);
    assert!((m.bias + d.exposure.mass[outside]).abs() <= 1e-15);
    assert!(
        exact_policy_variance(&f_a, &d.exposure, &greedy, VarianceMode::Deterministic).is_err()
    );
}

#[test]
fn default_library_is_complete_and_consistent() {
    let d = defaults();
    let out = pipeline::build_library(&d.cfg, &d.exposure, &d.f_s, true).unwrap();
    assert_eq!(out.library, d.library);
    let report = out.completeness.unwrap();
    assert!(report.is_complete(), "missed {:?}", report.missed);
    assert!(d.library.w > 0.0 && d.library.w <= d.library.mu_s() + 1e-15);
}

#[test]
fn oracle_moments_are_in_range() {
    let d = defaults();
    let f_a = pipeline::cav_field(&d.cfg).unwrap();
    for kind in [
        PolicyKind::Greedy,
        PolicyKind::EpsilonGreedy,
        PolicyKind::Crude,
    ] {
        let policy = pipeline::build_policy(&d.cfg, &d.library, kind).unwrap().0;
        for mode in [VarianceMode::Deterministic, VarianceMode::Bernoulli] {
            let m = policy_moments(&f_a, &d.exposure, &policy, mode).unwrap();
            assert!((0.0..=1.0).contains(&m.mu));
            assert!(m.variance >= 0.0);
        }
    }
}
