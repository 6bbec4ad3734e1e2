//! `budnav`: train, evaluate, compare and replay navigation policies.
//!
//! Exit codes: 0 success, 1 other failure, 2 config or input file problem,
//! 3 non-finite gradient, 4 corrupt checkpoint, 5 replay divergence.

mod compare;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// An error that carries its own exit status.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub msg: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Coded {}

pub fn coded(code: u8, msg: impl Into<String>) -> anyhow::Error {
    Coded { code, msg: msg.into() }.into()
}

/// Maps a core error to the exit status used outside of file parsing.
pub fn core_code(e: &budnav_core::Error) -> u8 {
    use budnav_core::Error as E;
    match e {
        E::Config(_) | E::Parse(_) => 2,
        E::NonFiniteGradient => 3,
        E::Checksum => 4,
        _ => 1,
    }
}

/// Writes to stdout; a closed pipe (`budnav replay ... | head`) is not an error.
pub fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

pub(crate) fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(c) = err.downcast_ref::<Coded>() {
        return c.code;
    }
    err.downcast_ref::<budnav_core::Error>().map_or(1, core_code)
}

#[derive(Parser)]
#[command(name = "budnav", version, about = "Greedy-routed policy optimization on a navigation grid world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Algo {
    /// Greedy-routed optimization (the config's routed variant, or full)
    Gro,
    Dagger,
    Bc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Heldout,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain with behavior cloning, then fine-tune and evaluate
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        /// Extra `section.key=value` overrides applied after the file
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on a suite split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, value_enum, default_value = "heldout")]
        split: SplitArg,
        /// Rollout settings (defaults when absent)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for CSV and traces (default: the checkpoint's)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of episodes written to the trace file
        #[arg(long, default_value_t = 8)]
        traces: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train several configs over several seeds and tabulate held-out metrics
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        seeds: Vec<u64>,
        /// Per-run outputs plus compare.csv and compare.json
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Re-execute a trace and draw reference and executed paths
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Skip the maps and only verify
        #[arg(long)]
        quiet: bool,
    },
    /// Write the benchmark suite a config describes
    GenSuite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("BUDNAV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| coded(2, format!("BUDNAV_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out, algo, set } => run::train(&config, &out, algo, &set),
        Command::Eval { ckpt, suite, split, config, out, traces, json } => {
            run::eval(&ckpt, &suite, split, config.as_deref(), out.as_deref(), traces, json)
        }
        Command::Compare { configs, seeds, out, json } => compare::compare(&configs, &seeds, out.as_deref(), json),
        Command::Replay { trace, quiet } => run::replay(&trace, quiet),
        Command::GenSuite { config, out, set } => run::gen_suite(&config, &out, &set),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
