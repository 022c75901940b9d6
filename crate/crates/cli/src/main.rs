//! `nlfb`: command-line front end.
//!
//! Exit codes: 0 success, 1 rejected model input, 2 numerical or output
//! failure, 64 usage error, 65 malformed input file, 66 unreadable config or
//! input file.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the kernel-table cache directory.
pub const CACHE_ENV: &str = "NLFB_CACHE_DIR";
/// Cache directory used when the variable is unset.
pub const DEFAULT_CACHE_DIR: &str = ".nlfb-cache";

#[derive(Parser, Debug)]
#[command(name = "nlfb", version, about = "Nonlocal diffusion with a radially symmetric free boundary")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Do not read or write the kernel-table cache.
    #[arg(long, global = true)]
    pub no_cache: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Flat key = value configuration file.
    #[arg(long, short)]
    pub config: PathBuf,

    /// Override a config entry, e.g. `--set mu=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Time-step the free boundary problem and write trajectory, snapshots,
    /// summary and manifest.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory; overrides `out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Solve for the semi-wave speed c0 and profile.
    Semiwave {
        #[command(flatten)]
        config: ConfigArg,
        /// Also write the profile as CSV (x, phi).
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Principal eigenvalue on a ball, or the critical radius L*.
    Eigen {
        #[command(flatten)]
        config: ConfigArg,
        /// Ball radius.
        #[arg(long = "L", value_name = "L", required_unless_present = "find_lstar", conflicts_with = "find_lstar")]
        radius: Option<f64>,
        /// Locate L* where lambda1 changes sign.
        #[arg(long = "find-lstar")]
        find_lstar: bool,
        /// Tolerance on L*.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Largest radius searched for L*.
        #[arg(long, default_value_t = 1e4)]
        l_max: f64,
    },
    /// Emit tabulated J~(r, rho) and J*(r - rho) as CSV.
    KernelTable {
        #[command(flatten)]
        config: ConfigArg,
        /// Largest r and rho in the table.
        #[arg(long, default_value_t = 5.0)]
        r_max: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an asymptotic law to a trajectory CSV.
    Fit {
        #[arg(long, value_enum)]
        model: FitKind,
        /// Trajectory CSV with at least the columns t and h.
        #[arg(long)]
        traj: PathBuf,
        /// Semi-wave speed, required for `logshift`.
        #[arg(long)]
        c0: Option<f64>,
        /// Fraction of the time span used, counted from the end.
        #[arg(long, default_value_t = 0.5, conflicts_with_all = ["from", "to"])]
        tail: f64,
        /// Start of an explicit fit window.
        #[arg(long, requires = "to")]
        from: Option<f64>,
        /// End of an explicit fit window.
        #[arg(long, requires = "from")]
        to: Option<f64>,
        /// Write the transformed data of the fit as two whitespace-separated
        /// columns for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run one simulation per parameter value and tabulate the outcomes.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// One of mu, h0, d, beta.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Concurrent simulations.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the kernel and the run configuration.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Speed,
    Logshift,
    Power,
    Tlogt,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
