use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wavekin::config::RunConfig;
use wavekin::run;

#[derive(Parser)]
#[command(name = "wavekin", version, about = "3-wave kinetic lattice laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output_dir in the config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override config fields, e.g. --set sim.t_end=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the grid into no-collision and collisional invariant regions.
    Decompose(CommonArgs),
    /// Integrate the kinetic equation and write snapshots plus diagnostics.
    Simulate(CommonArgs),
    /// Solve per-region local equilibria from a field or explicit invariants.
    Equilibrium(CommonArgs),
    /// Sweep the set index functionals over interior nodes.
    Indices(CommonArgs),
}

fn dispatch(cmd: &Command) -> wavekin::Result<()> {
    let (args, runner): (&CommonArgs, fn(&RunConfig, &std::path::Path) -> wavekin::Result<()>) =
        match cmd {
            Command::Decompose(a) => (a, run::run_decompose),
            Command::Simulate(a) => (a, run::run_simulate),
            Command::Equilibrium(a) => (a, run::run_equilibrium),
            Command::Indices(a) => (a, run::run_indices),
        };
    let cfg = RunConfig::load(&args.config, &args.set)?;
    let outdir = run::resolve_outdir(&cfg, args.output.as_deref())?;
    runner(&cfg, &outdir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
