//! `kimura`: run experiment configs and render their report bundles.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kimura_core::config::ExperimentConfig;
use kimura_core::error::KimuraError;
use kimura_core::io::{load_bundle, render_text};
use kimura_core::pipeline::{execute, Command, RunOptions, THREADS_ENV};

#[derive(Parser)]
#[command(
    name = "kimura",
    version,
    about = "Generalized Kimura operator experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the operator assumptions and the config.
    Validate(RunArgs),
    /// Solve the configured trajectories and write snapshots.
    Solve(RunArgs),
    /// Run the trajectory experiments, reusing snapshots from `solve`.
    Verify(RunArgs),
    /// Run the boundary Harnack, Holder and elliptic Harnack experiments.
    Harnack(RunArgs),
    /// Monte Carlo cross-validation against the PDE.
    McCompare(RunArgs),
    /// Every configured experiment, in dependency order.
    Run(RunArgs),
    /// Render an existing JSON bundle as text.
    Report {
        /// `report.json` or the bundle directory holding it.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Bundle root; each subcommand writes into `<out>/<subcommand>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N", env = THREADS_ENV)]
    threads: Option<usize>,
    /// Base cells per axis; the refinement series becomes `[N, 2N]`.
    #[arg(long, value_name = "N")]
    grid_override: Option<usize>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Report { path } => return report(&path),
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Harnack(a) => (Command::Harnack, a),
        Cmd::McCompare(a) => (Command::McCompare, a),
        Cmd::Run(a) => (Command::Run, a),
    };
    run(cmd, args)
}

fn report(path: &Path) -> ExitCode {
    match load_bundle(path).and_then(|b| render_text(&b)) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

fn run(cmd: Command, args: RunArgs) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(cells) = args.grid_override {
        if let Err(e) = cfg.override_grid(cells) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let root = args
        .out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let snapshot_dir = ["solve", "run"]
        .iter()
        .map(|c| root.join(c).join("snapshots"))
        .find(|d| d.is_dir());
    let opts = RunOptions {
        threads: args.threads,
        snapshot_dir,
    };
    match execute(&cfg, cmd, &root.join(cmd.name()), &opts) {
        Ok(outcome) => {
            for r in &outcome.bundle.reports {
                println!("{:<20} {}", r.tag, r.verdict.label());
            }
            for e in &outcome.bundle.errors {
                println!("{:<20} ERROR {}", e.experiment, e.error);
            }
            println!(
                "status {} -> {}",
                outcome.bundle.status,
                outcome.dir.display()
            );
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e @ KimuraError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}
