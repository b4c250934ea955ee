use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scenlib_core::PolicyKind;

mod commands;

use commands::{CliError, Context};

/// Scenario library generation and importance-sampled evaluation for cut-in encounters.
#[derive(Debug, Parser)]
#[command(name = "scenlib", version, about)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record wall-clock stage timings in the manifest.
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Greedy,
    EpsilonGreedy,
    Crude,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Greedy => PolicyKind::Greedy,
            PolicyArg::EpsilonGreedy => PolicyKind::EpsilonGreedy,
            PolicyArg::Crude => PolicyKind::Crude,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize naturalistic samples and write them as CSV.
    GenNdd,
    /// Fit exposure, compute surrogate criticality, search and seed-fill the library.
    BuildLibrary {
        /// Read naturalistic samples from this CSV instead of the config source.
        #[arg(long)]
        ndd: Option<PathBuf>,
    },
    /// Sample scenarios from a policy, test the vehicle and estimate the index.
    Evaluate {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Number of tests (default: config n_tests).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Exact index and per-policy variances by exhaustive grid evaluation.
    Oracle {
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Oracle versus estimated index and required test counts for every policy.
    Compare {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut ctx = Context::new(cli.config.as_deref(), cli.seed, cli.out, cli.timings)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::GenNdd => ctx.gen_ndd(),
        Command::BuildLibrary { ndd } => ctx.build_library(ndd.as_deref()),
        Command::Evaluate { library, policy, n } => {
            ctx.evaluate(library.as_deref(), policy.map(Into::into), n)
        }
        Command::Oracle { library } => ctx.oracle(library.as_deref()),
        Command::Compare { library, n } => ctx.compare(library.as_deref(), n),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
