//! Command-line driver: capacity, secrecy and identification experiments
//! with JSON summaries and CSV detail.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtpc::Exec;

use crate::commands::{Context, Outcome};
use crate::config::*;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or parameters.
    Usage(String),
    /// The run failed for a reason other than its inputs.
    Runtime(String),
    Io(String),
}

impl From<dtpc::Error> for CliError {
    fn from(e: dtpc::Error) -> Self {
        use dtpc::Error::*;
        match e {
            InvalidParameter { .. }
            | NotDegraded(_)
            | RateAboveCapacity { .. }
            | BudgetExceeded { .. }
            | MessageOutOfRange { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtpc", version, about = "Discrete-time Poisson channel experiments")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Constrained capacity and its optimal input law.
    Capacity(CapacityArgs),
    /// Secrecy capacity of a degraded pair.
    Secrecy(WiretapArgs),
    /// Secure identification capacity.
    Sid(WiretapArgs),
    /// Monte-Carlo identification errors.
    Idsim(IdsimArgs),
    /// Eavesdropper leakage on a random ensemble.
    Leakage(LeakageArgs),
    /// Information-density tails against the Chebyshev bound.
    Converse(ConverseArgs),
}

fn exec_for(threads: Option<usize>) -> Result<Exec, CliError> {
    match threads {
        None => Ok(Exec::default()),
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Ok(Exec::Parallel)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (common, block) = load(cli.config.as_deref())?;
    let out = cli.out.or(common.output_dir).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        out: &out,
        root_seed: cli.seed.or(common.root_seed).unwrap_or(1),
        tolerances: common.tolerances,
        exec: exec_for(cli.threads)?,
    };
    match cli.command {
        Command::Capacity(a) => commands::cmd_capacity(&ctx, a.merge(parse_block(block)?)),
        Command::Secrecy(a) => commands::cmd_secrecy(&ctx, a.merge(parse_block(block)?)),
        Command::Sid(a) => commands::cmd_sid(&ctx, a.merge(parse_block(block)?)),
        Command::Idsim(a) => commands::cmd_idsim(&ctx, a.merge(parse_block(block)?)),
        Command::Leakage(a) => commands::cmd_leakage(&ctx, a.merge(parse_block(block)?)),
        Command::Converse(a) => commands::cmd_converse(&ctx, a.merge(parse_block(block)?)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(o) if o.passed => ExitCode::SUCCESS,
        Ok(o) => {
            eprintln!("dtpc: {}", o.message);
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("dtpc: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) | Err(CliError::Io(m)) => {
            eprintln!("dtpc: {m}");
            ExitCode::from(1)
        }
    }
}
