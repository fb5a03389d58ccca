use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfde_cli::{run_file, ExperimentKind, Overrides};

#[derive(Parser)]
#[command(name = "sfde", version, about = "Simulation and Harnack-inequality experiments for SDEs with memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain Euler-Maruyama paths from `initial.x`.
    Simulate(Common),
    /// Coupling of the solutions from `initial.x` and `initial.y`.
    Couple(Common),
    /// Monte Carlo check of the Harnack inequality.
    Harnack(Common),
    /// Total-variation bound under shrinking perturbations.
    StrongFeller(Common),
    /// Exponential moments and invariant-measure diagnostics.
    Stationary(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML, or JSON as embedded in a report).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `monte_carlo.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `monte_carlo.n_paths`.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-path data.
    #[arg(long)]
    emit_paths: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Simulate(c) => (ExperimentKind::Simulate, c),
        Command::Couple(c) => (ExperimentKind::Couple, c),
        Command::Harnack(c) => (ExperimentKind::Harnack, c),
        Command::StrongFeller(c) => (ExperimentKind::StrongFeller, c),
        Command::Stationary(c) => (ExperimentKind::Stationary, c),
    };
    let overrides = Overrides { seed: common.seed, paths: common.paths, out: common.out, emit_paths: common.emit_paths };
    match run_file(kind, &common.config, &overrides) {
        Ok(summary) => {
            for c in &summary.report.checks {
                println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            println!("verdict: {}", if summary.report.pass { "pass" } else { "fail" });
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("sfde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
