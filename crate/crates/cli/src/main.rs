//! `peloton`: simulate races, extract drafting metrics, fit the mixed models
//! and solve the lead-or-draft game from the command line.

mod artifact;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use peloton::dilemma::Scenario;
use peloton::racelog::LogFormat;
use peloton::stats::{Method, Model, TrialColumn};

#[derive(Debug, Parser)]
#[command(name = "peloton", version, about = "Mass start drafting analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed; falls back to PELOTON_SEED, then to the config file.
    #[arg(long, env = "PELOTON_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Thresholds {
    /// Time gap (s) above which a skater counts as exposed.
    #[arg(long, default_value_t = 0.2)]
    gap_threshold: f64,
    /// Minimum gap (s) a race must exceed to count as a break-away.
    #[arg(long, default_value_t = 2.0)]
    breakaway_gap: f64,
    /// Relative exposed-time discrepancy tolerated between two checkers.
    #[arg(long, default_value_t = 0.1)]
    discrepancy_tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for LogFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LogFormat::Csv,
            Format::Jsonl => LogFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    StrategyDominant,
    AbilityDominant,
    Null,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::StrategyDominant => Scenario::StrategyDominant,
            ScenarioArg::AbilityDominant => Scenario::AbilityDominant,
            ScenarioArg::Null => Scenario::Null,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ColumnArg {
    BestTime,
    StandardizedBest,
}

impl From<ColumnArg> for TrialColumn {
    fn from(c: ColumnArg) -> Self {
        match c {
            ColumnArg::BestTime => TrialColumn::BestTime,
            ColumnArg::StandardizedBest => TrialColumn::StandardizedBest,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate races and write their logs, a time-trial table and a manifest.
    Simulate {
        /// `key = value` simulator config; defaults apply to unset keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trait preset applied on top of the config.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long, default_value_t = 1)]
        n_races: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// Compute exposed time and ranks for every log in a directory.
    Analyze {
        /// Directory of `.csv` / `.jsonl` race logs.
        logs: PathBuf,
        /// Metrics CSV; excluded races go to a `.excluded.json` sidecar next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        thresholds: Thresholds,
        #[command(flatten)]
        common: Common,
    },
    /// Fit one random-intercept model to a metrics table.
    Fit {
        metrics: PathBuf,
        #[arg(long)]
        model: Model,
        /// Time-trial CSV; required by eq3.
        #[arg(long)]
        time_trials: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "best-time")]
        trial_column: ColumnArg,
        #[arg(long, default_value = "reml")]
        method: Method,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Mixed equilibrium of a 2x2 lead-or-draft game.
    #[command(allow_negative_numbers = true)]
    Equilibrium {
        t: f64,
        r: f64,
        s: f64,
        p: f64,
        /// Start of a best-response trajectory.
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        /// Trajectory CSV (`iteration,x`); implies a trajectory run.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end run: simulate, analyze, exclude break-aways, fit all models.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long, default_value_t = 9)]
        n_races: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, default_value = "reml")]
        method: Method,
        #[command(flatten)]
        thresholds: Thresholds,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
