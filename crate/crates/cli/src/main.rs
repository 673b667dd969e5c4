//! `homog <subcommand> --config <path> [--jobs N] [--out DIR]`

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Run};
use config::Config;
use output::Sink;

#[derive(Parser, Debug)]
#[command(
    name = "homog",
    version,
    about = "Homogenization experiments for level-set PDE in periodic media"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with flat dotted keys.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory receiving the CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective tensors over a list of lattice directions.
    Effective(RunArgs),
    /// Harmonic limits of the oscillating tensors for a list of eta.
    Limits(RunArgs),
    /// Effective tensors along approach sequences, with their limits.
    Sweep(RunArgs),
    /// Front speed against epsilon, with traveling-wave bounds.
    Front(RunArgs),
    /// Unscaled front speed against the forcing in two dimensions.
    Speed2d(RunArgs),
    /// Critical obstacle level against the cell-problem value.
    Obstacle(RunArgs),
    /// Diophantine check and Fourier corrector of the mobility.
    Fourier(RunArgs),
    /// Slice invariant density against an SDE histogram.
    Invariant(RunArgs),
}

fn execute(command: Command) -> Result<(), CliError> {
    let (name, args, f): (&'static str, RunArgs, fn(&mut Run) -> commands::Result<()>) =
        match command {
            Command::Effective(a) => ("effective", a, commands::effective),
            Command::Limits(a) => ("limits", a, commands::limits),
            Command::Sweep(a) => ("sweep", a, commands::sweep),
            Command::Front(a) => ("front", a, commands::front),
            Command::Speed2d(a) => ("speed2d", a, commands::speed2d),
            Command::Obstacle(a) => ("obstacle", a, commands::obstacle),
            Command::Fourier(a) => ("fourier", a, commands::fourier),
            Command::Invariant(a) => ("invariant", a, commands::invariant),
        };
    if let Some(n) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let cfg = Config::load(&args.config)?;
    let mut sink = Sink::new(&args.out)?;
    let mut run = Run {
        name,
        cfg: &cfg,
        sink: &mut sink,
    };
    f(&mut run)?;
    for k in cfg.unused_keys() {
        log::warn!("config key `{k}` was not used by `{name}`");
    }
    for p in &sink.written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOMOG_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
