//! Success-rate evaluation, benchmark parameter sweeps and table assembly.
//!
//! Every protocol draws its trajectories from indexed random streams, so
//! two policies evaluated under the same protocol and seed see exactly the
//! same episodes, and results do not depend on the number of threads.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbwm_env::{self, EnvConfig, EnvError};
use crate::market_data::ReturnSeries;
use crate::strategies::{AllocationPolicy, MertonConstant, StrategyContext, StrategyError, VarianceBudget};
use crate::trajectory_gen::{estimate_moments, EpisodeSource, GenError, Generator, Trajectory, TrajectorySource};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("invalid protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProtocolKind {
    Historical,
    Simulated { windows: Vec<usize> },
    Bootstrap { blocks: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    #[serde(flatten)]
    pub kind: ProtocolKind,
    /// Ignored for the historical protocol, which uses every window.
    pub count: usize,
    pub seed: u64,
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl EvalProtocol {
    pub fn historical() -> Self {
        Self {
            kind: ProtocolKind::Historical,
            count: 0,
            seed: 0,
        }
    }

    pub fn simulated(windows: &[usize], count: usize, seed: u64) -> Self {
        Self {
            kind: ProtocolKind::Simulated {
                windows: windows.to_vec(),
            },
            count,
            seed,
        }
    }

    pub fn bootstrap(blocks: &[usize], count: usize, seed: u64) -> Self {
        Self {
            kind: ProtocolKind::Bootstrap { blocks: blocks.to_vec() },
            count,
            seed,
        }
    }

    /// Short column label, e.g. `simulated_24_36_48`.
    pub fn label(&self) -> String {
        match &self.kind {
            ProtocolKind::Historical => "historical".into(),
            ProtocolKind::Simulated { windows } => format!("simulated_{}", join(windows, "_")),
            ProtocolKind::Bootstrap { blocks } => format!("bootstrap_{}", join(blocks, "_")),
        }
    }

    pub fn generator(&self) -> Generator {
        match &self.kind {
            ProtocolKind::Historical => Generator::Historical,
            ProtocolKind::Simulated { windows } => Generator::Gaussian {
                windows: windows.clone(),
            },
            ProtocolKind::Bootstrap { blocks } => Generator::Bootstrap { blocks: blocks.clone() },
        }
    }

    pub fn source<'a>(&self, series: &'a ReturnSeries, length: usize) -> Result<TrajectorySource<'a>, EvalError> {
        if !matches!(self.kind, ProtocolKind::Historical) && self.count == 0 {
            return Err(EvalError::Protocol("count must be >= 1".into()));
        }
        Ok(TrajectorySource::new(series, self.generator(), length, self.seed)?)
    }

    /// Number of episodes actually run on `series`.
    pub fn episodes(&self, series_len: usize, length: usize) -> usize {
        match self.kind {
            ProtocolKind::Historical => crate::trajectory_gen::historical_window_count(series_len, length),
            _ => self.count,
        }
    }
}

impl fmt::Display for EvalProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The seven protocol columns of the comparison table.
pub fn table_protocols(count: usize, seed: u64) -> Vec<EvalProtocol> {
    vec![
        EvalProtocol::historical(),
        EvalProtocol::simulated(&[36], count, seed),
        EvalProtocol::simulated(&[24, 36, 48], count, seed),
        EvalProtocol::simulated(&[60], count, seed),
        EvalProtocol::bootstrap(&[1], count, seed),
        EvalProtocol::bootstrap(&[1, 2, 3], count, seed),
        EvalProtocol::bootstrap(&[4, 5, 6], count, seed),
    ]
}

/// Outcome of one policy under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub strategy: String,
    pub protocol: String,
    pub success_rate: f64,
    pub count: usize,
    pub seed: u64,
    /// Mean stock weight at each step (the empirical glide path).
    pub glide_path: Vec<f64>,
}

fn play(policy: &dyn AllocationPolicy, env: &EnvConfig, traj: &Trajectory) -> Result<(bool, Vec<f64>), EnvError> {
    let mut actions = Vec::with_capacity(env.horizon);
    let (_, reward) = gbwm_env::rollout(env, traj, |s, realized| {
        let a = gbwm_env::clamp_unit(policy.act(s, realized));
        actions.push(a);
        a
    })?;
    Ok((reward > 0.0, actions))
}

/// Success rate and mean allocation path over a set of episodes.
pub fn run_source(
    policy: &dyn AllocationPolicy,
    source: &dyn EpisodeSource,
    episodes: usize,
    env: &EnvConfig,
) -> Result<(f64, Vec<f64>), EvalError> {
    let results: Vec<(bool, Vec<f64>)> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| -> Result<_, EvalError> {
            let traj = source.episode(e)?;
            Ok(play(policy, env, &traj)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(summarize(&results, env.horizon))
}

fn summarize(results: &[(bool, Vec<f64>)], horizon: usize) -> (f64, Vec<f64>) {
    let n = results.len().max(1) as f64;
    let hits = results.iter().filter(|r| r.0).count() as f64;
    let mut glide = vec![0.0; horizon];
    for (_, acts) in results {
        for (g, a) in glide.iter_mut().zip(acts) {
            *g += a;
        }
    }
    glide.iter_mut().for_each(|g| *g /= n);
    (hits / n, glide)
}

/// Evaluates `policy` on `protocol` trajectories drawn from `series`.
pub fn run_protocol(
    policy: &dyn AllocationPolicy,
    protocol: &EvalProtocol,
    series: &ReturnSeries,
    env: &EnvConfig,
) -> Result<EvalRow, EvalError> {
    env.validate()?;
    let source = protocol.source(series, env.horizon)?;
    let count = protocol.episodes(series.len(), env.horizon);
    let (success_rate, glide_path) = run_source(policy, &source, count, env)?;
    Ok(EvalRow {
        strategy: policy.name(),
        protocol: protocol.label(),
        success_rate,
        count,
        seed: protocol.seed,
        glide_path,
    })
}

/// Per-step mean allocation of `policy` under `protocol`.
pub fn glide_path(
    policy: &dyn AllocationPolicy,
    protocol: &EvalProtocol,
    series: &ReturnSeries,
    env: &EnvConfig,
) -> Result<Vec<f64>, EvalError> {
    Ok(run_protocol(policy, protocol, series, env)?.glide_path)
}

/// Evaluates a fixed list of trajectories.
pub fn run_trajectories(
    policy: &dyn AllocationPolicy,
    trajectories: &[Trajectory],
    env: &EnvConfig,
) -> Result<(f64, Vec<f64>), EvalError> {
    let results: Vec<(bool, Vec<f64>)> = trajectories
        .par_iter()
        .map(|t| play(policy, env, t))
        .collect::<Result<_, _>>()?;
    Ok(summarize(&results, env.horizon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepFamily {
    /// Risk-aversion `γ` of the Merton constant.
    Merton,
    /// Budget `V` of variance budgeting.
    VarianceBudget,
}

impl SweepFamily {
    pub fn default_range(self) -> (f64, f64) {
        match self {
            SweepFamily::Merton => (0.004, 0.05),
            SweepFamily::VarianceBudget => (0.001, 0.02),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub family: SweepFamily,
    pub best: f64,
    pub best_success: f64,
    /// `(parameter, success rate)` in ascending parameter order.
    pub curve: Vec<(f64, f64)>,
}

/// Inclusive grid `from, from + step, …, ≤ to` (tolerant to rounding).
pub fn linear_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || to < from {
        return vec![from];
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((from + i as f64 * step) * 1e12).round() / 1e12).collect()
}

/// Evaluates each parameter on the same trajectories; ties go to the
/// smaller parameter.
pub fn sweep_parameter(
    family: SweepFamily,
    grid: &[f64],
    ctx: &StrategyContext,
    trajectories: &[Trajectory],
    env: &EnvConfig,
) -> Result<SweepResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut params = grid.to_vec();
    params.sort_by(|a, b| a.total_cmp(b));
    let mut curve = Vec::with_capacity(params.len());
    for &p in &params {
        let rate = match family {
            SweepFamily::Merton => run_trajectories(&MertonConstant::new(ctx, p)?, trajectories, env)?.0,
            SweepFamily::VarianceBudget => run_trajectories(&VarianceBudget::new(ctx, p), trajectories, env)?.0,
        };
        curve.push((p, rate));
    }
    let (best, best_success) = curve
        .iter()
        .fold((params[0], f64::NEG_INFINITY), |acc, &(p, r)| if r > acc.1 { (p, r) } else { acc });
    Ok(SweepResult {
        family,
        best,
        best_success,
        curve,
    })
}

/// Fitted stock means over every contiguous window of each size.
pub fn mean_estimate_spread(series: &ReturnSeries, windows: &[usize]) -> Result<Vec<(usize, Vec<f64>)>, EvalError> {
    windows
        .iter()
        .map(|&w| {
            if w < 2 || w > series.len() {
                return Err(EvalError::Generator(GenError::SeriesTooShort {
                    len: series.len(),
                    window: w,
                }));
            }
            let est = (0..=series.len() - w)
                .map(|s| estimate_moments(&series.bond()[s..s + w], &series.stock()[s..s + w]).map(|m| m.mu_stock()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((w, est))
        })
        .collect()
}

/// Strategy × protocol success-rate matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub columns: Vec<EvalProtocol>,
    pub counts: Vec<usize>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub strategy: String,
    /// `None` when the strategy's artifact was unavailable.
    pub cells: Vec<Option<f64>>,
    pub glide_paths: Vec<Option<Vec<f64>>>,
}

impl ComparisonTable {
    pub fn get(&self, strategy: &str, column: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy).and_then(|r| r.cells[column])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.label());
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.strategy);
            for c in &r.cells {
                out.push(',');
                match c {
                    Some(v) => out.push_str(&format!("{v:.6}")),
                    None => out.push_str("absent"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every available policy on every protocol.
pub fn build_table(
    policies: &[(String, Option<&dyn AllocationPolicy>)],
    protocols: &[EvalProtocol],
    series: &ReturnSeries,
    env: &EnvConfig,
) -> Result<ComparisonTable, EvalError> {
    let counts = protocols.iter().map(|p| p.episodes(series.len(), env.horizon)).collect();
    let mut rows = Vec::with_capacity(policies.len());
    for (name, policy) in policies {
        let mut cells = Vec::with_capacity(protocols.len());
        let mut paths = Vec::with_capacity(protocols.len());
        for proto in protocols {
            match policy {
                Some(p) => {
                    let row = run_protocol(*p, proto, series, env)?;
                    cells.push(Some(row.success_rate));
                    paths.push(Some(row.glide_path));
                }
                None => {
                    cells.push(None);
                    paths.push(None);
                }
            }
        }
        rows.push(TableRow {
            strategy: name.clone(),
            cells,
            glide_paths: paths,
        });
    }
    Ok(ComparisonTable {
        columns: protocols.to_vec(),
        counts,
        rows,
    })
}
