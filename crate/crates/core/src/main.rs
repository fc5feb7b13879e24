use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffuse_domain::cli::{run, ExperimentKind, Status};

/// Diffuse domain solver and eps-convergence experiments.
#[derive(Parser)]
#[command(name = "ddm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file with [problem] and [experiment] sections.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Node cap for every grid; overrides `max_nodes` in the config.
    #[arg(long)]
    max_nodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the diffuse problem for the first eps and compare with the sharp reference.
    Solve(RunArgs),
    /// Run an eps-sweep with coupled grids.
    Sweep(RunArgs),
    /// Energy gap of a fixed field over the eps list.
    GammaCheck(RunArgs),
    /// Interface-measure, coefficient-blend and trace checks over the eps list.
    LemmaCheck(RunArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::GammaCheck(a) => (ExperimentKind::GammaCheck, a),
        Command::LemmaCheck(a) => (ExperimentKind::LemmaCheck, a),
    };
    let (status, message) = run(&args.config, kind, args.out.as_deref(), args.max_nodes);
    match status {
        Status::Success => println!("{message}"),
        _ => eprintln!("{message}"),
    }
    ExitCode::from(status as u8)
}
