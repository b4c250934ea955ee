//! Shared fixtures for the pipeline benchmarks.

use scenlib_core::{pipeline, ChallengeField, ExperimentConfig, ExposureModel, Library};

pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub exposure: ExposureModel,
    pub f_s: ChallengeField,
    pub library: Library,
}

/// Default-config exposure, surrogate field and library.
pub fn fixture() -> Fixture {
    let cfg = ExperimentConfig::default();
    let exposure = pipeline::exposure_model(&cfg).expect("default exposure");
    let f_s = pipeline::surrogate_field(&cfg).expect("default surrogate field");
    let library = pipeline::build_library(&cfg, &exposure, &f_s, false)
        .expect("default library")
        .library;
    Fixture {
        cfg,
        exposure,
        f_s,
        library,
    }
}
