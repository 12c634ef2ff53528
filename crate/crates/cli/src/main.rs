//! Command-line front end: scenario inspection, association, evaluation,
//! optimization, simulation, sweeps and the figure-level experiments.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Infeasible(_) => "infeasible",
            CliError::Budget(_) => "budget",
            CliError::Io(_) => "io",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hetnet", version, about = "Load balancing and delay analysis of two-tier cellular networks")]
struct Cli {
    /// JSON run configuration; defaults to the 7-cell desk-scale setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "HETNET_OUT_DIR", default_value = "hetnet-out")]
    out_dir: PathBuf,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "HETNET_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective configuration as JSON.
    Config,
    /// Layout and gains of one realization.
    Scenario {
        #[command(subcommand)]
        action: DumpAction,
    },
    /// SINR and per-channel rate of every (location, queue) pair.
    Phy {
        #[command(subcommand)]
        action: PhyAction,
    },
    /// Serving queue of every location under a rule.
    Associate(AssociateArgs),
    /// Loads and delays of a rule at one arrival rate.
    Evaluate(EvaluateArgs),
    /// Optimal association for one metric.
    Optimize(OptimizeArgs),
    /// Event-driven simulation of the queues under a rule.
    Simulate(SimulateArgs),
    /// Optimum and rules over RA schemes, K and arrival rates.
    Sweep(SweepArgs),
    /// Figure-level experiments averaged over realizations.
    Reproduce(ReproduceArgs),
}

#[derive(Subcommand, Debug)]
enum DumpAction {
    /// Write scenario.csv (loc_id, bs_id, distance_m, gain_db).
    Dump(RealizationArg),
}

#[derive(Subcommand, Debug)]
enum PhyAction {
    /// Write phy.csv (loc_id, vbs_id, band, sinr_db, rate_bps).
    Dump(PhyDumpArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct RealizationArg {
    /// Realization index; the scenario seed is offset by it.
    #[arg(long, default_value_t = 0)]
    pub realization: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct RaArgs {
    /// ccd, od or psd.
    #[arg(long, default_value = "ccd")]
    pub ra: String,
    /// Small-cell sub-channels for od and psd.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct RuleArgs {
    /// best-sinr, re or scf.
    #[arg(long, default_value = "best-sinr")]
    pub rule: String,
    /// Small-cell-first SINR threshold, dB.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct PhyDumpArgs {
    #[command(flatten)]
    pub ra: RaArgs,
    #[command(flatten)]
    pub realization: RealizationArg,
}

#[derive(Args, Debug, Serialize)]
pub struct AssociateArgs {
    #[command(flatten)]
    pub ra: RaArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[command(flatten)]
    pub realization: RealizationArg,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub ra: RaArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Total arrival rate, files per second.
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub realization: RealizationArg,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    /// lambda-max, max-delay or avg-delay.
    #[arg(long, default_value = "lambda-max")]
    pub metric: String,
    #[command(flatten)]
    pub ra: RaArgs,
    /// Every K from 1 to M-1 instead of --k.
    #[arg(long)]
    pub sweep_k: bool,
    /// Arrival rates for the delay metrics, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Overrides the configured number of realizations.
    #[arg(long)]
    pub realizations: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub ra: RaArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// exponential or deterministic.
    #[arg(long)]
    pub file_sizes: Option<String>,
    /// Simulation seed; defaults to the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write trace.csv for the first replication.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub realization: RealizationArg,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long, default_value = "lambda-max")]
    pub metric: String,
    /// RA kinds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "ccd,od,psd")]
    pub ra: Vec<String>,
    /// Curves, comma separated: optimal, best-sinr, re, scf.
    #[arg(long, value_delimiter = ',', default_value = "optimal,best-sinr,re,scf")]
    pub rules: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub k_step: usize,
    #[arg(long)]
    pub realizations: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReproduceArgs {
    /// Figure numbers 2 to 7, comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub fig: Vec<String>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Base seed; realization r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_step: Option<usize>,
    #[arg(long)]
    pub delay_k_step: Option<usize>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'static str,
    code: u8,
    message: &'a str,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            Ok(())
        }
        Command::Scenario {
            action: DumpAction::Dump(a),
        } => commands::scenario_dump(&cfg, out, a),
        Command::Phy {
            action: PhyAction::Dump(a),
        } => commands::phy_dump(&cfg, out, a),
        Command::Associate(a) => commands::associate(&cfg, out, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, out, a),
        Command::Optimize(a) => commands::optimize(cfg, out, a),
        Command::Simulate(a) => commands::simulate(&cfg, out, a),
        Command::Sweep(a) => commands::sweep(cfg, out, a),
        Command::Reproduce(a) => commands::reproduce(cfg, out, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            let report = ErrorReport {
                error: ErrorBody {
                    kind: e.kind(),
                    code: e.code(),
                    message: &msg,
                },
            };
            eprintln!("{}", serde_json::to_string(&report).expect("report serializes"));
            ExitCode::from(e.code())
        }
    }
}
