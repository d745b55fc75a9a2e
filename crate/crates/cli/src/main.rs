// SPDX-License-Identifier: Apache-2.0

//! `tromux` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 validation (bad or missing input,
//! replay mismatch), 3 infeasible (placement or asset locking failed).

mod commands;
mod error;
mod manifest;
mod table;

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use tromux::{Format, Variant};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "tromux",
    version,
    about = "Logic locking that fills open layout sites"
)]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Cell library file; the built-in library when absent.
    #[arg(long, global = true)]
    pub library: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run the full flow: lock assets, then fill open sites with locked cells.
    Harden(FlowArgs),
    /// Lock the asset flip-flops and build the key chain only.
    LockAssets(FlowArgs),
    /// Dump toggle rates and timing paths of a netlist.
    Profile(ProfileArgs),
    /// Try to insert Trojans into the baseline and hardened layouts of a run.
    InsertTrojan(TrojanArgs),
    /// Predict a locked design's key and score the prediction.
    EvalAttack(AttackArgs),
    /// Tabulate flow reports.
    Report(ReportArgs),
    /// Rerun a recorded command into a new directory and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    /// Netlist, `.bench` or `.v`.
    pub design: PathBuf,
    /// Asset flip-flop instance names, one per line.
    pub assets: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Flow config (`key = value` lines). Falls back to `TROMUX_CONFIG`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sets both the locking and the placement seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Keep complement-pair counts of locked cells within one.
    #[arg(long)]
    pub balanced: bool,
    /// Override one config entry.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output netlist format; defaults to the input's.
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    pub design: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Key file to load before profiling a locked design.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long, default_value_t = tromux::sim::DEFAULT_CYCLES)]
    pub cycles: usize,
    #[arg(long, default_value_t = tromux::sim::DEFAULT_SEED)]
    pub seed: u64,
    /// Clock period; 1.25 times the longest path when absent.
    #[arg(long)]
    pub clock: Option<f64>,
    #[arg(long, default_value_t = tromux::timing::DEFAULT_PATH_LIMIT)]
    pub path_limit: usize,
    #[arg(long, default_value_t = tromux::sim::DEFAULT_LCN_THRESHOLD)]
    pub lcn_threshold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrojanArgs {
    /// Run directory written by `harden`.
    pub run: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Built-in Trojan name or Trojan file; all built-ins when absent.
    #[arg(long = "trojan")]
    pub trojans: Vec<String>,
    /// Seed of the attacker's toggle profiling; the run's profiling seed
    /// when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trojans processed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AttackKind {
    Imbalance,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    /// Locked netlist, or a run directory holding `locked.*` and `key.txt`.
    pub target: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Correct key for scoring.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AttackKind::Imbalance)]
    pub attack: AttackKind,
    /// Score this prediction file instead of running an attack.
    #[arg(long, conflicts_with = "attack")]
    pub prediction: Option<PathBuf>,
    /// Solved run directories; their locked types replace the target's own
    /// census.
    #[arg(long = "train")]
    pub train: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories or report JSON files.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Print the reports as one JSON array instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Directory holding the manifest to replay.
    pub run: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Harden(_) => "harden",
            Command::LockAssets(_) => "lock-assets",
            Command::Profile(_) => "profile",
            Command::InsertTrojan(_) => "insert-trojan",
            Command::EvalAttack(_) => "eval-attack",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }

    /// Redirect the command's output directory.
    pub fn set_out(&mut self, dir: PathBuf) -> CliResult<()> {
        match self {
            Command::Harden(a) | Command::LockAssets(a) => a.out = dir,
            Command::Profile(a) => a.out = dir,
            Command::InsertTrojan(a) => a.out = dir,
            Command::EvalAttack(a) => a.out = dir,
            Command::Replay(a) => a.out = dir,
            Command::Report(_) => {
                return Err(CliError::Usage("report writes no run directory".into()))
            }
        }
        Ok(())
    }
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    commands::dispatch(cli, &argv[1..])
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    if let Err(e) = run(argv) {
        let msg = e.to_string();
        eprintln!("error: {}", msg.trim_end());
        std::process::exit(e.exit_code());
    }
}
