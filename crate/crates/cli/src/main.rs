use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcl_cli::{CliError, Grid};

#[derive(Parser)]
#[command(name = "fcl", version, about = "Federated continual learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "FCL_SEED")]
    seed: Option<u64>,
    /// Suppress the summary on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic scenario as line records.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and write its reports.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fcl-out")]
        out: PathBuf,
    },
    /// Run the Cartesian product of a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid file: one `key = v1, v2, ...` line per swept parameter.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "fcl-sweep")]
        out: PathBuf,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, out } => {
            let config = fcl_cli::load_config(common.config.as_deref(), common.seed)?;
            fcl_cli::cmd_generate(&config, &out)?;
            if !common.quiet {
                eprintln!("wrote {}", out.display());
            }
        }
        Command::Run { common, out } => {
            let config = fcl_cli::load_config(common.config.as_deref(), common.seed)?;
            let s = fcl_cli::cmd_run(&config, &out)?;
            if !common.quiet {
                eprintln!(
                    "{}: amse {:.6} bwt {} fwt {} -> {}",
                    config.algorithm.family,
                    s.amse,
                    fmt_opt(s.bwt),
                    fmt_opt(s.fwt),
                    out.display()
                );
            }
        }
        Command::Sweep { common, grid, out } => {
            let config = fcl_cli::load_config(common.config.as_deref(), common.seed)?;
            let text = std::fs::read_to_string(&grid).map_err(|source| CliError::Io { path: grid, source })?;
            let rows = fcl_cli::cmd_sweep(&config, &Grid::parse(&text)?, &out)?;
            if !common.quiet {
                eprintln!("{} runs -> {}", rows.len(), out.join(fcl_cli::SWEEP_FILE).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
