//! Command-line front end for the channel scattering solver.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qtube::cli::{cmd_compose, cmd_converge, cmd_mufield, cmd_solve, load_config};
use qtube::SolverError;

#[derive(Parser)]
#[command(name = "qtube", about = "Scattering operators for waves in 2-D channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy sweep over the full pipeline.
    Solve(Common),
    /// Truncation convergence study.
    Converge(Common),
    /// Dump the metric factor mu(u, v) on a lattice.
    Mufield(Common),
    /// Partition the geometry at the configured cuts and compose.
    Compose(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output path; overrides the configuration, defaults to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads for the sweep (0 = all cores).
    #[arg(long, short)]
    workers: Option<usize>,
    /// Print progress information to stderr.
    #[arg(long, short, action = clap::ArgAction::Count)]
    verbose: u8,
}

const EXIT_SOLVER: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn run(common: &Common, go: impl FnOnce(&mut dyn Write) -> qtube::Result<bool>) -> ExitCode {
    let target = common.output.clone();
    let outcome = match &target {
        Some(path) => {
            let file = match std::fs::File::create(path) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: cannot open {}: {e}", path.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let mut w = std::io::BufWriter::new(file);
            go(&mut w)
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            go(&mut w)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_SOLVER),
        Err(e @ (SolverError::Config(_) | SolverError::InvalidGeometry(_) | SolverError::Io(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Converge(c) | Command::Mufield(c) | Command::Compose(c) => c,
    };
    let mut cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if common.output.is_none() {
        if let Some(path) = cfg.output.clone() {
            // config-level output path acts as the default
            let common = Common {
                config: common.config.clone(),
                output: Some(path),
                workers: common.workers,
                verbose: common.verbose,
            };
            return dispatch(&cli.command, &common, &cfg);
        }
    }
    dispatch(&cli.command, common, &cfg)
}

fn dispatch(command: &Command, common: &Common, cfg: &qtube::cli::RunConfig) -> ExitCode {
    if common.verbose > 0 {
        eprintln!(
            "geometry {} | {} energies | N = {}",
            cfg.geometry_path.display(),
            cfg.k2_values.len(),
            cfg.n_modes
        );
    }
    match command {
        Command::Solve(_) => run(common, |w| cmd_solve(cfg, w)),
        Command::Converge(_) => run(common, |w| cmd_converge(cfg, w)),
        Command::Mufield(_) => run(common, |w| {
            cmd_mufield(cfg, w)?;
            Ok(true)
        }),
        Command::Compose(_) => run(common, |w| cmd_compose(cfg, w)),
    }
}
