//! `gbwm` command-line driver.

pub mod config;
mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gbwm", version, about = "Goal-based wealth management experiments")]
pub struct Cli {
    /// TOML run configuration (falls back to $GBWM_CONFIG, then built-in defaults)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for episode evaluation; 1 is the bit-deterministic reference mode [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a monthly return CSV into the canonical format
    Ingest(IngestArgs),
    /// Generate return trajectories
    Simulate(SimulateArgs),
    /// Solve the dynamic-programming benchmark
    DpSolve(DpSolveArgs),
    /// Train the PPO agent
    Train(TrainArgs),
    /// Evaluate one strategy under one protocol
    Evaluate(EvaluateArgs),
    /// Sweep a benchmark parameter on training simulations
    Sweep(SweepArgs),
    /// Build the strategy × protocol success-rate table
    Table(TableArgs),
    /// Export a policy over (time, wealth)
    PolicyGrid(PolicyGridArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Source CSV [default: data.path]
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Date column [default: date]
    #[arg(long)]
    pub date_column: Option<String>,
    /// Bond return column [default: bond_return]
    #[arg(long)]
    pub bond_column: Option<String>,
    /// Stock return column [default: stock_return]
    #[arg(long)]
    pub stock_column: Option<String>,
    /// Canonical CSV to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// gaussian, bootstrap or historical [default: gaussian]
    #[arg(long)]
    pub mode: Option<String>,
    /// Estimation windows for gaussian mode [default: generator.train_windows = 120]
    #[arg(long)]
    pub windows: Option<String>,
    /// Block sizes for bootstrap mode [default: 1]
    #[arg(long)]
    pub blocks: Option<String>,
    /// Trajectories (ignored for historical) [default: evaluation.count = 10000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Trajectory length in months [default: env.horizon = 120]
    #[arg(long)]
    pub length: Option<usize>,
    /// Source rows: train, test or full [default: train]
    #[arg(long)]
    pub subset: Option<String>,
    /// Random seed [default: evaluation.seed = 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV (trajectory_id,step,bond_return,stock_return)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DpSolveArgs {
    /// Wealth grid nodes [default: dp.nodes = 300]
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Stock weights on [0, 1] [default: dp.alphas = 41]
    #[arg(long)]
    pub alphas: Option<usize>,
    /// Policy table JSON to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training episodes [default: ppo.total_episodes = 200000]
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Random seed [default: ppo.seed = 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate [default: ppo.learning_rate = 0.0001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Episodes between held-out evaluations [default: ppo.eval_interval = 5000]
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Held-out episodes per evaluation [default: ppo.eval_episodes = 2000]
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Best checkpoint JSON to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training curve CSV [default: <out>.curve.csv]
    #[arg(long, value_name = "FILE")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Merton risk aversion [default: strategies.gamma = 0.004]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Variance-budget annual variance [default: strategies.budget = 0.013]
    #[arg(long)]
    pub budget: Option<f64>,
    /// Actor-critic checkpoint for rl [default: artifacts.checkpoint]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// DP policy table [default: artifacts.dp_table, else solved on the fly]
    #[arg(long, value_name = "FILE")]
    pub dp_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Strategy: dg, mc, vb, dp or rl
    #[arg(long)]
    pub policy: String,
    /// historical, simulated:<windows> or bootstrap:<blocks>, e.g. bootstrap:1,2,3
    #[arg(long)]
    pub protocol: String,
    /// Trajectories [default: evaluation.count = 10000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Random seed [default: evaluation.seed = 7]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub policy_args: PolicyArgs,
    /// Report CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-step mean allocation CSV [default: not written]
    #[arg(long, value_name = "FILE")]
    pub glide_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// mc or vb
    #[arg(long)]
    pub strategy: String,
    /// from:to:step or comma list [default: sweep.gamma_grid = 0.004:0.05:0.002, sweep.budget_grid = 0.001:0.02:0.001]
    #[arg(long)]
    pub grid: Option<String>,
    /// Training simulations [default: sweep.count = 10000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Random seed [default: sweep.seed = 11]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Curve CSV (parameter,success_rate)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Include all five strategies (the only mode; accepted for clarity)
    #[arg(long)]
    pub all: bool,
    /// Trajectories per simulated or bootstrapped column [default: evaluation.count = 10000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Random seed [default: evaluation.seed = 7]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub policy_args: PolicyArgs,
    /// Table CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Table JSON with counts, seeds and glide paths [default: not written]
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolicyGridArgs {
    /// rl or dp [default: rl]
    #[arg(long)]
    pub policy: Option<String>,
    /// Points on t/T in [0, 1] [default: 11]
    #[arg(long)]
    pub time_points: Option<usize>,
    /// Points on W/W_G in [0, 2] [default: 21]
    #[arg(long)]
    pub wealth_points: Option<usize>,
    #[command(flatten)]
    pub policy_args: PolicyArgs,
    /// Grid CSV (time_fraction,wealth_ratio,alpha)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref())?;
    let workers = cli.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| commands::dispatch(cli.command, cfg))
}
