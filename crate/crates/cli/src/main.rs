//! `multilattice` command-line driver.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] multilattice::Error),
    /// The run completed but the crystal or the solver failed its check.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use multilattice::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Core(E::Unstable(_) | E::NoConvergence(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "multilattice", version, about = "Point defects in multilattice crystals")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomised step; recorded in the reports.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CrystalArg {
    /// Crystal JSON file or `preset:NAME`.
    #[arg(long)]
    pub crystal: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the built-in crystal presets.
    Presets {
        /// Print the JSON document of one preset instead.
        #[arg(long)]
        show: Option<String>,
    },
    /// Relax the defect on a ball window.
    Relax(RelaxArgs),
    /// Phonon spectrum on a Brillouin grid.
    Phonon(PhononArgs),
    /// Phonon stability certificate.
    Stability(StabilityArgs),
    /// Cauchy-Born checks.
    Cb(CbArgs),
    /// Lattice Green's function blocks and their decay.
    Greens(GreensArgs),
    /// Decay fits of a stored displacement field.
    Decay(DecayArgs),
    /// Stability, relaxation, residual, Green's functions and decay in one run.
    Study(StudyArgs),
}

#[derive(Args, Debug)]
pub struct RelaxArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    /// Window radius.
    #[arg(long, default_value_t = 32.0)]
    pub rwin: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Number of dipole ramp stages.
    #[arg(long, default_value_t = 1)]
    pub continuation: usize,
    /// Grid of the stability pre-check, 0 skips it.
    #[arg(long, default_value_t = 16)]
    pub stability_grid: usize,
    /// Binary field output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV field output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON report (stdout when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PhononArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// Spectrum CSV: k components, then eigenvalues ascending.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary (stdout when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Certificate JSON (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum CbCheck {
    Claimant,
    Consistency,
    Tensor,
}

#[derive(Args, Debug)]
pub struct CbArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    #[arg(long, value_enum)]
    pub check: CbCheck,
    /// Random probes for the claimant check.
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
    /// Supercell orders for the consistency check.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub ladder: Vec<usize>,
    /// Quadrature cells per axis for the continuum energy.
    #[arg(long, default_value_t = 32)]
    pub cells: usize,
    /// Amplitude of the smooth test fields.
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockChoice {
    All,
    QInv,
    Coupling,
    ShiftFamily,
}

#[derive(Args, Debug)]
pub struct GreensArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    /// Supercell order.
    #[arg(long = "N", default_value_t = 256)]
    pub size: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub blocks: Vec<BlockChoice>,
    /// Fit decay exponents.
    #[arg(long)]
    pub fit: bool,
    #[arg(long, default_value_t = 8.0)]
    pub r_min: f64,
    /// Defaults to N/4.
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Annulus data for plotting.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecayArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    /// Binary field written by `relax`.
    #[arg(long)]
    pub field: PathBuf,
    /// Difference orders of the displacement; shifts are fitted one order lower.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub orders: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    pub r_min: f64,
    /// Defaults to half the window radius.
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[command(flatten)]
    pub crystal: CrystalArg,
    #[arg(long, default_value_t = 64.0)]
    pub rwin: f64,
    /// Supercell order of the Green's functions.
    #[arg(long = "N", default_value_t = 256)]
    pub size: usize,
    /// Stability grid.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Directory for the report and the relaxed field.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Presets { show } => commands::presets(show.as_deref()),
        Command::Relax(a) => commands::relax(&a, seed),
        Command::Phonon(a) => commands::phonon(&a, seed),
        Command::Stability(a) => commands::stability(&a, seed),
        Command::Cb(a) => commands::cb(&a, seed),
        Command::Greens(a) => commands::greens(&a, seed),
        Command::Decay(a) => commands::decay(&a, seed),
        Command::Study(a) => commands::study(&a, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
