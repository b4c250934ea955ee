use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use scenlib_core::evaluation::{evaluate_policy, z_alpha};
use scenlib_core::exposure::{read_samples_csv, synthesize_ndd, write_samples_csv};
use scenlib_core::oracle::{policy_moments, PolicyOracle};
use scenlib_core::persist::{self, CompareRow, FileDigest, RunManifest, Timing};
use scenlib_core::{
    pipeline, required_tests, Error, ExperimentConfig, Library, OracleResult, PolicyKind,
    SamplingPolicy, VarianceMode,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_) => 2,
                Error::ZeroChallenge | Error::EmptyLibrary => 3,
                Error::GridMismatch => 4,
                _ => 1,
            },
            CliError::Other(_) => 1,
        }
    }
}

pub struct Context {
    cfg: ExperimentConfig,
    config_hash: String,
    out: PathBuf,
    timings: RefCell<Option<Vec<Timing>>>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        seed: Option<u64>,
        out: PathBuf,
        timings: bool,
    ) -> Result<Self, CliError> {
        let mut cfg = match config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => CliError::Config(other.to_string()),
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let config_hash = persist::sha256_hex(cfg.to_toml_string().as_bytes());
        std::fs::create_dir_all(&out).map_err(Error::from)?;
        Ok(Self {
            cfg,
            config_hash,
            out,
            timings: RefCell::new(timings.then(Vec::new)),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn stage<T>(&self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        if let Some(t) = self.timings.borrow_mut().as_mut() {
            t.push(Timing {
                stage: name.to_string(),
                millis: start.elapsed().as_millis(),
            });
        }
        value
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(RunManifest::digest(path)?);
        Ok(())
    }

    fn record_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(RunManifest::digest(path)?);
        Ok(())
    }

    fn finish(&mut self, command: &str) -> Result<(), CliError> {
        let mut manifest = RunManifest::new(command, self.config_hash.clone());
        manifest.inputs = std::mem::take(&mut self.inputs);
        manifest.outputs = std::mem::take(&mut self.outputs);
        manifest.timings = self.timings.take().unwrap_or_default();
        let path = self.out_path(&format!("{}-{command}.json", self.cfg.output.manifest));
        persist::write_json(&path, &manifest)?;
        Ok(())
    }

    fn library_path(&self, library: Option<&Path>) -> PathBuf {
        library
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out_path(&self.cfg.output.library))
    }

    fn load_library(&mut self, library: Option<&Path>) -> Result<(Library, String), CliError> {
        let path = self.library_path(library);
        let lib = persist::load_library(&path)?;
        if lib.grid() != &self.cfg.grid()? {
            return Err(Error::GridMismatch.into());
        }
        let digest = RunManifest::digest(&path)?;
        let hash = digest.sha256.clone();
        self.inputs.push(digest);
        Ok((lib, hash))
    }

    pub fn gen_ndd(&mut self) -> Result<(), CliError> {
        let spec = self.cfg.ndd_spec()?;
        let grid = self.cfg.grid()?;
        let samples = self.stage("synthesize", || synthesize_ndd(&spec, &grid))?;
        let path = self.out_path(&self.cfg.output.ndd_csv);
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &samples)?;
        persist::write_atomic(&path, &buf)?;
        self.record_output(&path)?;
        println!("wrote {} samples to {}", samples.len(), path.display());
        self.finish("gen-ndd")
    }

    pub fn build_library(&mut self, ndd: Option<&Path>) -> Result<(), CliError> {
        let samples = match ndd {
            Some(path) => {
                self.record_input(path)?;
                read_samples_csv(path)?
            }
            None => {
                if let Some(csv) = self.cfg.ndd.csv.clone() {
                    self.record_input(&csv)?;
                }
                let cfg = &self.cfg;
                self.stage("ndd", || pipeline::ndd_samples(cfg))?
            }
        };
        let fit = pipeline::fit_exposure(&self.cfg, &samples)?;
        if fit.out_of_bounds > 0 {
            log::warn!(
                "{} samples outside the grid were dropped",
                fit.out_of_bounds
            );
        }
        let exposure = fit.model;
        let cfg = &self.cfg;
        let challenge = self.stage("surrogate-field", || pipeline::surrogate_field(cfg))?;
        let generated = self.stage("library", || {
            pipeline::build_library(cfg, &exposure, &challenge, true)
        })?;
        let lib = &generated.library;
        if lib.mu_s() <= 0.0 {
            return Err(Error::ZeroChallenge.into());
        }
        if lib.is_empty() {
            return Err(Error::EmptyLibrary.into());
        }
        for w in &lib.warnings {
            log::warn!("{w}");
        }

        let lib_path = self.out_path(&self.cfg.output.library);
        persist::save_library(lib, &lib_path)?;
        self.record_output(&lib_path)?;
        if let Some(report) = &generated.completeness {
            let path = self.out_path(&self.cfg.output.completeness);
            persist::write_json(&path, report)?;
            self.record_output(&path)?;
        }
        println!(
            "library: {} members, mu_S = {:e}, gamma = {:e}, W = {:e}",
            lib.len(),
            lib.mu_s(),
            lib.gamma,
            lib.w
        );
        if let Some(report) = &generated.completeness {
            println!(
                "completeness: found {} of {} critical cells, missed {}",
                report.exhaustive_count - report.missed.len(),
                report.exhaustive_count,
                report.missed.len()
            );
        }
        self.finish("build-library")
    }

    pub fn evaluate(
        &mut self,
        library: Option<&Path>,
        policy: Option<PolicyKind>,
        n: Option<usize>,
    ) -> Result<(), CliError> {
        let (lib, library_hash) = self.load_library(library)?;
        let kind = policy.unwrap_or(self.cfg.policy);
        let n = n.unwrap_or(self.cfg.n_tests);
        if n == 0 {
            return Err(CliError::Config("n must be >= 1".into()));
        }
        let (sampling, choice) = pipeline::build_policy(&self.cfg, &lib, kind)?;
        let cfg = &self.cfg;
        let mut estimate = self.stage("evaluate", || {
            evaluate_policy(
                &sampling,
                &lib.exposure,
                &cfg.cav,
                &cfg.odd,
                n,
                cfg.replications,
                cfg.confidence(),
                cfg.evaluation_seed(),
            )
        })?;
        estimate.report.policy.epsilon_choice = choice;
        estimate.report.config_hash = Some(self.config_hash.clone());
        estimate.report.library_hash = Some(library_hash);
        let report = &estimate.report;
        let path = self.out_path(&self.cfg.output.report);
        persist::write_json(&path, report)?;
        self.record_output(&path)?;
        println!(
            "{}: mu_hat = {:e}, CI = [{:e}, {:e}], n = {}, required_n = {}",
            kind.label(),
            report.mu_hat,
            report.ci_low,
            report.ci_high,
            report.n,
            report
                .required_n
                .map_or_else(|| "n/a".to_string(), |r| r.to_string())
        );
        self.finish("evaluate")
    }

    fn policies(&self, lib: &Library) -> Result<Vec<SamplingPolicy>, CliError> {
        let kinds: &[PolicyKind] = if lib.is_empty() {
            log::warn!("empty library: only the crude policy is available");
            &[PolicyKind::Crude]
        } else {
            &[
                PolicyKind::Greedy,
                PolicyKind::EpsilonGreedy,
                PolicyKind::Crude,
            ]
        };
        kinds
            .iter()
            .map(|&k| Ok(pipeline::build_policy(&self.cfg, lib, k)?.0))
            .collect()
    }

    pub fn oracle(&mut self, library: Option<&Path>) -> Result<(), CliError> {
        let (lib, _) = self.load_library(library)?;
        let cfg = &self.cfg;
        let f_a = self.stage("cav-field", || pipeline::cav_field(cfg))?;
        let policies = self.policies(&lib)?;
        let result = OracleResult::compute(&f_a, &lib, &policies)?;
        let path = self.out_path(&self.cfg.output.oracle);
        persist::write_json(&path, &result)?;
        self.record_output(&path)?;
        println!(
            "mu = {:e}, mu_S = {:e}, gamma = {:e}",
            result.mu, result.mu_s, result.gamma
        );
        for p in &result.policies {
            print_oracle_line(p);
        }
        self.finish("oracle")
    }

    pub fn compare(&mut self, library: Option<&Path>, n: Option<usize>) -> Result<(), CliError> {
        let (lib, _) = self.load_library(library)?;
        let n = n.unwrap_or(self.cfg.n_tests);
        if n == 0 {
            return Err(CliError::Config("n must be >= 1".into()));
        }
        let cfg = &self.cfg;
        let f_a = self.stage("cav-field", || pipeline::cav_field(cfg))?;
        let mode = if cfg.cav.is_deterministic() {
            VarianceMode::Deterministic
        } else {
            VarianceMode::Bernoulli
        };
        let z = z_alpha(cfg.alpha)?;
        let mut rows = Vec::new();
        for policy in self.policies(&lib)? {
            let m = policy_moments(&f_a, &lib.exposure, &policy, mode)?;
            let estimate = evaluate_policy(
                &policy,
                &lib.exposure,
                &cfg.cav,
                &cfg.odd,
                n,
                cfg.replications,
                cfg.confidence(),
                cfg.evaluation_seed(),
            )?;
            let required_n = if m.mu > 0.0 {
                Some(required_tests(z, cfg.beta, m.mu, m.variance)?)
            } else {
                None
            };
            rows.push(CompareRow {
                policy: policy.kind.label().to_string(),
                mu_oracle: m.mu,
                mu_hat: estimate.report.mu_hat,
                sigma_sq_oracle: m.variance,
                required_n,
                ratio: None,
            });
        }
        let crude = rows
            .iter()
            .find(|r| r.policy == PolicyKind::Crude.label())
            .and_then(|r| r.required_n);
        for r in &mut rows {
            r.ratio = match (crude, r.required_n) {
                (Some(c), Some(q)) => Some(c as f64 / q as f64),
                _ => None,
            };
        }
        let path = self.out_path(&self.cfg.output.compare);
        let mut buf = Vec::new();
        persist::write_compare_csv(&mut buf, &rows)?;
        persist::write_atomic(&path, &buf)?;
        self.record_output(&path)?;
        print!("{}", String::from_utf8_lossy(&buf));
        self.finish("compare")
    }
}

fn print_oracle_line(p: &PolicyOracle) {
    println!(
        "{}: epsilon = {}, sigma^2 = {:e} (bernoulli {:e}), bias = {:e}, support violations = {}",
        p.policy,
        p.epsilon,
        p.sigma_sq_deterministic,
        p.sigma_sq_bernoulli,
        p.bias,
        p.support_violations
    );
}
