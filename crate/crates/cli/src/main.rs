//! Batch front end for the oscillating-coefficient BVP solver: reads a JSON
//! problem description, dispatches one subcommand, and persists CSV/JSON
//! reports that embed the config hash and seed for reproducibility.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use defect_homog::{commands, Failure};

#[derive(Parser)]
#[command(name = "defect-homog", version, about = "Dirichlet problems with oscillating coefficients and localized defects", max_term_width = 100)]
struct Cli {
    /// Problem description (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Where reports are written; defaults to the config's out_dir.
    #[arg(long, global = true, value_name = "PATH")]
    out_dir: Option<PathBuf>,

    /// Scale override; repeat to replace the config's epsilon list.
    #[arg(long = "epsilon", global = true, value_name = "FLOAT")]
    epsilons: Vec<f64>,

    /// Seed override for the randomized conditioning estimates.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective matrix and solve the homogenized problem.
    Homogenize,
    /// Ellipticity, defect class membership, and non-degeneracy checks.
    Check,
    /// Solve at one scale, frozen iteration seeded by the homogenized run.
    Solve {
        /// Write the assembled derivative matrix to this file.
        #[arg(long, value_name = "PATH")]
        dump_matrix: Option<PathBuf>,
    },
    /// Error-versus-scale study against the homogenized solution.
    Rates,
    /// Rate study per configured defect, with the cross-defect spread.
    SweepDefects,
    /// Subinterval averaging estimate for the scaled coefficient.
    Averaging,
    /// Compare the solver against the finite-element oracle.
    OracleCompare {
        /// Subintervals per coefficient cell in the oracle mesh.
        #[arg(long, default_value_t = 8, value_name = "INT")]
        refine: usize,
    },
    /// Per-vector versus operator-norm convergence of the derivative.
    OpnormDemo,
}

fn init_thread_pool() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DEFECT_HOMOG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| {
            Failure::Config(format!("DEFECT_HOMOG_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_thread_pool()?;
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    let session = commands::Session::open(config_path, cli.out_dir, &cli.epsilons, cli.seed)?;
    match cli.command {
        Command::Homogenize => commands::homogenize(&session),
        Command::Check => commands::check(&session),
        Command::Solve { dump_matrix } => commands::solve(&session, dump_matrix.as_deref()),
        Command::Rates => commands::rates(&session),
        Command::SweepDefects => commands::sweep_defects(&session),
        Command::Averaging => commands::averaging(&session),
        Command::OracleCompare { refine } => commands::oracle_compare(&session, refine),
        Command::OpnormDemo => commands::opnorm_demo(&session),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
