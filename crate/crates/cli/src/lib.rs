//! Command-line front end: argument parsing, experiment orchestration and
//! artifact output. Exit status 0 on success, 2 on invalid input, 3 when a
//! run fails.

pub mod artifacts;
pub mod commands;
pub mod recipes;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<kr_core::params::ParamError> for CliError {
    fn from(e: kr_core::params::ParamError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<kr_core::scaling::ScalingError> for CliError {
    fn from(e: kr_core::scaling::ScalingError) -> Self {
        match e {
            kr_core::scaling::ScalingError::Param(p) => p.into(),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<kr_core::engine::EngineError> for CliError {
    fn from(e: kr_core::engine::EngineError) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<kr_core::anderson::AndersonError> for CliError {
    fn from(e: kr_core::anderson::AndersonError) -> Self {
        use kr_core::anderson::AndersonError::*;
        match e {
            PoleInDomain { .. } | InvalidInput(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kr", version, about = "Quantum kicked rotor and Anderson localization experiments")]
pub struct Cli {
    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Ensemble seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "KR_OUT_DIR", default_value = "kr-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Diffusion of the classical Standard Map.
    Classical(ClassicalArgs),
    /// Evolve one family or a quasimomentum ensemble.
    Evolve(EvolveArgs),
    /// Pseudo-disorder, hopping table and Floquet check of the Anderson mapping.
    AndersonMap(AndersonArgs),
    /// Transport exponent on an (epsilon, K) grid.
    PhaseDiagram(PhaseArgs),
    /// Finite-time scaling along a path through the transition.
    Scaling(ScalingArgs),
    /// Rescaled momentum distributions at several times.
    Collapse(CollapseArgs),
    /// Canned desk-scale version of a reference experiment.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct ClassicalArgs {
    #[arg(long = "K", default_value_t = 10.0)]
    pub kick: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// JSON run configuration; the flags below are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "K", default_value_t = 7.2)]
    pub kick: f64,
    #[arg(long, default_value_t = 2.89)]
    pub kbar: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Extra angular frequencies, comma separated (default: none, or
    /// 2 pi sqrt 5 and 2 pi sqrt 13 when epsilon > 0).
    #[arg(long, value_delimiter = ',')]
    pub omegas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    pub kicks: u64,
    #[arg(long, default_value_t = 1024)]
    pub half_width: usize,
    #[arg(long, default_value_t = 200)]
    pub members: usize,
}

#[derive(Debug, Args)]
pub struct AndersonArgs {
    #[arg(long = "K", default_value_t = 4.0)]
    pub kick: f64,
    #[arg(long, default_value_t = 2.89)]
    pub kbar: f64,
    #[arg(long = "beta", default_value_t = 0.0)]
    pub beta_qm: f64,
    /// Quasi-energy of the pseudo-disorder.
    #[arg(long, default_value_t = 0.0)]
    pub omega: f64,
    /// Half width of the onsite chain.
    #[arg(long, default_value_t = 256)]
    pub sites: usize,
    #[arg(long, default_value_t = 20)]
    pub r_max: usize,
    #[arg(long, default_value_t = 256)]
    pub n_quad: usize,
    /// Basis half width of the Floquet check (at most 128).
    #[arg(long, default_value_t = 64)]
    pub m_small: usize,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    #[arg(long, default_value_t = 4.0)]
    pub k_min: f64,
    #[arg(long, default_value_t = 9.0)]
    pub k_max: f64,
    #[arg(long, default_value_t = 16)]
    pub nk: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eps_min: f64,
    #[arg(long, default_value_t = 0.9)]
    pub eps_max: f64,
    #[arg(long, default_value_t = 16)]
    pub neps: usize,
    #[arg(long, default_value_t = 1000)]
    pub t_eval: u64,
    #[arg(long, default_value_t = 24)]
    pub members: usize,
    #[arg(long, default_value_t = 512)]
    pub half_width: usize,
    /// Regression window ending at t_eval, in decades.
    #[arg(long, default_value_t = 0.5)]
    pub window: f64,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// JSON array of transport curves to analyze instead of simulating.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, default_value_t = 3.3)]
    pub k_min: f64,
    #[arg(long, default_value_t = 5.7)]
    pub k_max: f64,
    #[arg(long, default_value_t = 13)]
    pub nk: usize,
    /// The path is epsilon = eps_ref + eps_slope (K - k_ref).
    #[arg(long, default_value_t = 4.7)]
    pub k_ref: f64,
    #[arg(long, default_value_t = 0.72)]
    pub eps_ref: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eps_slope: f64,
    #[arg(long, default_value_t = 1000)]
    pub kicks: u64,
    #[arg(long, default_value_t = 500)]
    pub members: usize,
    #[arg(long, default_value_t = 512)]
    pub half_width: usize,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Samples before this time are left out of the scaling analysis.
    #[arg(long, default_value_t = 10.0)]
    pub min_time: f64,
    /// Fixed critical point (default: the beta = 2/3 crossing).
    #[arg(long = "k-c")]
    pub k_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    #[arg(long = "K", default_value_t = 6.3)]
    pub kick: f64,
    #[arg(long, default_value_t = 0.55)]
    pub epsilon: f64,
    #[arg(long, value_delimiter = ',', default_value = "300,1000")]
    pub times: Vec<u64>,
    #[arg(long, default_value_t = 500)]
    pub members: usize,
    #[arg(long, default_value_t = 512)]
    pub half_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig3,
    Fig4,
    #[value(name = "fig5-small")]
    Fig5Small,
    Fig6,
    Fig7,
    Fig8,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    pub figure: Figure,
}

/// Parse `argv` and run. Returns the process exit status.
pub fn run_from<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Run a parsed command; returns the path of the written manifest.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<PathBuf, CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Runtime(e.into()))?
    };
    pool.install(|| commands::dispatch(cli, argv))
}
