use clap::{Parser, Subcommand};
use kicksim_cli::{exit_code, load_config, run, Suite, EXIT_ERROR};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kicksim", version, about = "Kicked particle in a periodic potential: simulation and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overshoot levels for `records`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the model assumptions and report derived constants.
    Validate,
    /// Run one trajectory and write its event log.
    Simulate,
    /// Joint central limit checks on an ensemble.
    Clt,
    /// Decay of the rescaled force integral across horizons.
    Drift,
    /// Low-momentum incursion counts and symmetries.
    Incursions,
    /// Ladder heights, level overshoots and torus crossings.
    Records,
    /// Torus position at the first alarm from high momentum.
    Flatten,
    /// Every suite in order.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::All => "all",
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Clt => "clt",
            Command::Drift => "drift",
            Command::Incursions => "incursions",
            Command::Records => "records",
            Command::Flatten => "flatten",
        }
    }

    fn suites(self) -> Vec<Suite> {
        match self {
            Command::All => Suite::ALL.to_vec(),
            Command::Validate => vec![Suite::Validate],
            Command::Simulate => vec![Suite::Simulate],
            Command::Clt => vec![Suite::Clt],
            Command::Drift => vec![Suite::Drift],
            Command::Incursions => vec![Suite::Incursions],
            Command::Records => vec![Suite::Records],
            Command::Flatten => vec![Suite::Flatten],
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cli: &Cli) -> Result<i32, kicksim_cli::CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = &cli.levels {
        cfg.records.levels = l.clone();
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(kicksim_cli::config::ConfigErrors(errors).into());
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    let outcome = run(cli.command.name(), &cli.command.suites(), &cfg, &out, cli.workers)?;
    for (name, status) in &outcome.manifest.suites {
        println!("{name}: {status:?}");
    }
    println!("results in {}", out.display());
    Ok(exit_code(outcome.status))
}
