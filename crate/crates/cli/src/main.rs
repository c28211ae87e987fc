mod commands;
mod config;
mod models;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgp_core::DgpError;

use config::RunConfig;

/// Exit status 1 for numerical or verification failures, 2 for usage and
/// validation errors.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<DgpError> for CliError {
    fn from(e: DgpError) -> Self {
        let code = if e.is_numerical() || matches!(e, DgpError::Stage { .. }) {
            1
        } else {
            2
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Ordered `key=value` lines for stdout.
#[derive(Default)]
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    pub fn put_vec(&mut self, key: &str, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, joined.join(","));
    }

    pub fn comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    fn print(&self) {
        for l in &self.lines {
            println!("{l}");
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dgp",
    version,
    about = "Latent projection, constrained search and rough alignment on a toy generator"
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Configuration override; may be repeated. Takes precedence over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Threads for batch Monte Carlo work.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Shorthand for --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a PCA basis to latent samples.
    FitPca(commands::FitPcaArgs),
    /// Map a strength code through the truncated projector.
    Project(commands::ProjectArgs),
    /// Chi-square tail probability and its upper bounds.
    TailProb(commands::TailProbArgs),
    /// Homography from four point pairs, optionally warping an image.
    Homography(commands::HomographyArgs),
    /// ARAP deformation of a regular grid mesh.
    Arap(commands::ArapArgs),
    /// Warp a garment onto a model image.
    RoughAlign(commands::RoughAlignArgs),
    /// Erosion-depth weight map of a binary mask.
    WeightMap(commands::WeightMapArgs),
    /// Train the projector and discriminator and save a model directory.
    TrainProjector(commands::TrainArgs),
    /// Semantic search over the latent code.
    SemanticSearch(commands::SearchArgs),
    /// Pattern search over the noise term.
    PatternSearch(commands::PatternArgs),
    /// Empirical check of the ellipse tail law and its bounds.
    VerifyTheorem1(commands::VerifyArgs),
    /// Full pipeline on model and garment inputs.
    RunDgp(commands::RunArgs),
    /// Finite-difference check of every analytic gradient.
    GradCheck(commands::GradCheckArgs),
    /// Write the seeded toy scene inputs.
    MakeFixture(commands::FixtureArgs),
    /// Print or self-test the configuration.
    Config(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Assert that defaults equal the published hyper-parameters.
    #[arg(long)]
    self_test: bool,
    /// Precede each key with a comment describing it.
    #[arg(long, conflicts_with = "self_test")]
    describe: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut run = RunConfig::default();
    if let Some(path) = &cli.config {
        run.load_file(path)?;
    }
    run.apply_overrides(&cli.set)?;
    if let Some(seed) = cli.seed {
        run.set("seed", seed.to_string())?;
    }
    if let Some(w) = cli.workers {
        run.set("workers", w.to_string())?;
    }
    if run.usize("workers")? == 0 {
        return Err(CliError::usage("workers must be >= 1"));
    }
    Ok(run)
}

fn dispatch(cmd: &Command, run: &RunConfig, out: &mut Report) -> Result<(), CliError> {
    match cmd {
        Command::FitPca(a) => commands::fit_pca(a, run, out),
        Command::Project(a) => commands::project(a, run, out),
        Command::TailProb(a) => commands::tail_prob(a, out),
        Command::Homography(a) => commands::homography(a, out),
        Command::Arap(a) => commands::arap(a, run, out),
        Command::RoughAlign(a) => commands::rough_align(a, run, out),
        Command::WeightMap(a) => commands::weight_map(a, out),
        Command::TrainProjector(a) => commands::train(a, run, out),
        Command::SemanticSearch(a) => commands::semantic(a, run, out),
        Command::PatternSearch(a) => commands::pattern(a, run, out),
        Command::VerifyTheorem1(a) => commands::verify_theorem1(a, run, out),
        Command::RunDgp(a) => commands::run_dgp(a, run, out),
        Command::GradCheck(a) => commands::grad_check(a, run, out),
        Command::MakeFixture(a) => commands::make_fixture(a, run, out),
        Command::Config(a) => commands::config(a.self_test, a.describe, run, out),
    }
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::failure(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T: Send>(_workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    Ok(f())
}

fn real_main() -> Result<(), CliError> {
    let cli = Cli::parse();
    let run = load_config(&cli)?;
    let mut out = Report::default();
    let result = with_workers(run.usize("workers")?, || dispatch(&cli.command, &run, &mut out))?;
    out.print();
    result
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
