//! Backward induction over a time × wealth grid maximising the probability
//! of ending at or above the goal.
//!
//! Wealth is measured in units of the goal (`W_G = 1`). Each candidate
//! portfolio holds a fixed stock weight `α` for one month; its monthly
//! simple-return mean `μ_p` and volatility `σ_p` come from the two-asset
//! moments and are mapped to lognormal parameters
//!
//! ```text
//! μ̃ = ln(1 + μ_p),   σ̃ = σ_p / (1 + μ_p),
//! ln W_{t+1} = ln W_t + μ̃ − σ̃²/2 + σ̃ Z.
//! ```
//!
//! The grid is uniform in log-wealth. Transition probabilities assign the
//! lognormal mass of each log-cell (bounded by midpoints between nodes,
//! open-ended at the extremes) to the node at its centre.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gbwm_env::{EnvConfig, EnvState};
use crate::rng::substream;
use crate::strategies::AllocationPolicy;
use crate::trajectory_gen::Moments;

/// Probabilities below this are dropped from the transition band.
const MASS_CUTOFF: f64 = 1e-16;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("grid needs at least 16 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("need at least 2 candidate weights, got {0}")]
    TooFewCandidates(usize),
    #[error("degenerate moments: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub alpha: f64,
    /// Monthly simple-return mean.
    pub mean: f64,
    /// Monthly simple-return standard deviation.
    pub vol: f64,
}

impl Candidate {
    pub fn log_drift(&self) -> f64 {
        let s = self.log_vol();
        (1.0 + self.mean).ln() - 0.5 * s * s
    }

    pub fn log_vol(&self) -> f64 {
        self.vol / (1.0 + self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSet {
    pub candidates: Vec<Candidate>,
}

impl PortfolioSet {
    /// `n_alphas` weights uniformly spaced on `[0, 1]`.
    pub fn from_moments(m: &Moments, n_alphas: usize) -> Result<Self, DpError> {
        if n_alphas < 2 {
            return Err(DpError::TooFewCandidates(n_alphas));
        }
        let candidates = (0..n_alphas)
            .map(|k| {
                let a = k as f64 / (n_alphas - 1) as f64;
                let (sbb, ssb, sss) = (m.sigma[0][0], m.sigma[1][0], m.sigma[1][1]);
                let var = a * a * sss + 2.0 * a * (1.0 - a) * ssb + (1.0 - a) * (1.0 - a) * sbb;
                Candidate {
                    alpha: a,
                    mean: a * m.mu_stock() + (1.0 - a) * m.mu_bond(),
                    vol: var.max(0.0).sqrt(),
                }
            })
            .collect();
        Ok(Self { candidates })
    }
}

/// Log-uniform wealth grid in goal units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthGrid {
    log_min: f64,
    step: f64,
    nodes: Vec<f64>,
}

impl WealthGrid {
    /// Grid spanning `ln W_0 ± (max|drift|·T + 4·max σ̃·√T)`, widened if
    /// needed to bracket the goal, and shifted so `W_0` is a node.
    pub fn build(config: &EnvConfig, set: &PortfolioSet, n_nodes: usize) -> Result<Self, DpError> {
        if n_nodes < 16 {
            return Err(DpError::TooFewNodes(n_nodes));
        }
        let t = config.horizon as f64;
        let mut drift: f64 = 0.0;
        let mut vol: f64 = 0.0;
        for c in &set.candidates {
            if !c.mean.is_finite() || !c.vol.is_finite() || c.mean <= -1.0 {
                return Err(DpError::Degenerate("non-finite candidate moments"));
            }
            drift = drift.max(c.log_drift().abs());
            vol = vol.max(c.log_vol());
        }
        let w0 = config.initial_wealth_ratio.ln();
        let goal_gap = (0.0 - w0).abs();
        let half = (drift * t + 4.0 * vol * t.sqrt()).max(1.25 * goal_gap).max(0.05);
        let step = 2.0 * half / (n_nodes - 1) as f64;
        // Put W_0 exactly on a node.
        let below = ((w0 - (w0 - half)) / step).round();
        let log_min = w0 - below * step;
        let nodes = (0..n_nodes).map(|i| (log_min + i as f64 * step).exp()).collect();
        Ok(Self { log_min, step, nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn log_node(&self, i: usize) -> f64 {
        self.log_min + i as f64 * self.step
    }

    pub fn log_step(&self) -> f64 {
        self.step
    }

    /// Nearest node in log-wealth, clamped to the grid.
    pub fn nearest(&self, wealth: f64) -> usize {
        if !(wealth > 0.0) {
            return 0;
        }
        let x = (wealth.ln() - self.log_min) / self.step;
        x.round().clamp(0.0, (self.nodes.len() - 1) as f64) as usize
    }

    /// Nearest node in linear wealth, clamped to the grid.
    pub fn nearest_linear(&self, wealth: f64) -> usize {
        let i = self.nodes.partition_point(|&w| w < wealth);
        if i == 0 {
            0
        } else if i == self.nodes.len() || wealth - self.nodes[i - 1] <= self.nodes[i] - wealth {
            i - 1
        } else {
            i
        }
    }
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }
}

/// Non-zero band of a transition row.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub start: usize,
    pub probs: Vec<f64>,
}

impl Band {
    pub fn full(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[self.start..self.start + self.probs.len()].copy_from_slice(&self.probs);
        v
    }
}

/// One-month transition distribution from node `i` under `candidate`.
pub fn transition_probs(grid: &WealthGrid, i: usize, candidate: &Candidate) -> Band {
    let n = grid.len();
    let mean = grid.log_node(i) + candidate.log_drift();
    let sd = candidate.log_vol();
    if !(sd > 0.0) {
        let j = ((mean - grid.log_min) / grid.step).round().clamp(0.0, (n - 1) as f64) as usize;
        return Band { start: j, probs: vec![1.0] };
    }
    let half = 0.5 * grid.step;
    let cdf = |j: usize| -> f64 {
        // upper edge of cell j
        if j + 1 >= n {
            1.0
        } else {
            phi((grid.log_node(j) + half - mean) / sd)
        }
    };
    let mut probs = Vec::with_capacity(n);
    let mut lower = 0.0;
    for j in 0..n {
        let upper = cdf(j);
        probs.push((upper - lower).max(0.0));
        lower = upper;
    }
    let first = probs.iter().position(|&p| p > MASS_CUTOFF).unwrap_or(0);
    let last = probs.iter().rposition(|&p| p > MASS_CUTOFF).unwrap_or(n - 1);
    let mut probs = probs[first..=last].to_vec();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Band { start: first, probs }
}

/// Transition bands for every (candidate, node).
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    /// `bands[k][i]`
    pub bands: Vec<Vec<Band>>,
}

impl Transitions {
    pub fn build(grid: &WealthGrid, set: &PortfolioSet) -> Self {
        let bands = set
            .candidates
            .par_iter()
            .map(|c| (0..grid.len()).map(|i| transition_probs(grid, i, c)).collect())
            .collect();
        Self { bands }
    }

    pub fn expect(&self, k: usize, i: usize, values: &[f64]) -> f64 {
        let b = &self.bands[k][i];
        b.probs.iter().zip(&values[b.start..]).map(|(p, v)| p * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub grid: WealthGrid,
    pub alphas: Vec<f64>,
    pub horizon: usize,
    /// `action[t][i]`: index into `alphas`, for `t < horizon`.
    pub action: Vec<Vec<usize>>,
    /// `value[t][i]` for `t ≤ horizon`.
    pub value: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn alpha(&self, t: usize, i: usize) -> f64 {
        self.alphas[self.action[t][i]]
    }

    pub fn root_value(&self, initial_wealth_ratio: f64) -> f64 {
        self.value[0][self.grid.nearest(initial_wealth_ratio)]
    }
}

/// Values two candidates must differ by before the riskier one is chosen.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Backward recursion; ties go to the smallest weight.
pub fn solve(grid: &WealthGrid, set: &PortfolioSet, horizon: usize) -> PolicyTable {
    let tr = Transitions::build(grid, set);
    solve_with(grid, set, &tr, horizon)
}

pub fn solve_with(grid: &WealthGrid, set: &PortfolioSet, tr: &Transitions, horizon: usize) -> PolicyTable {
    let n = grid.len();
    let terminal: Vec<f64> = grid.nodes().iter().map(|&w| if w >= 1.0 { 1.0 } else { 0.0 }).collect();
    let mut value = vec![Vec::new(); horizon + 1];
    let mut action = vec![Vec::new(); horizon];
    value[horizon] = terminal;
    for t in (0..horizon).rev() {
        let next = &value[t + 1];
        let (v, a): (Vec<f64>, Vec<usize>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best = (f64::NEG_INFINITY, 0);
                for k in 0..set.candidates.len() {
                    let v = tr.expect(k, i, next);
                    if v > best.0 + TIE_TOLERANCE {
                        best = (v, k);
                    }
                }
                (best.0.clamp(0.0, 1.0), best.1)
            })
            .unzip();
        value[t] = v;
        action[t] = a;
    }
    PolicyTable {
        grid: grid.clone(),
        alphas: set.candidates.iter().map(|c| c.alpha).collect(),
        horizon,
        action,
        value,
    }
}

/// Value of holding candidate `k` at every step.
pub fn fixed_candidate_value(tr: &Transitions, grid: &WealthGrid, k: usize, horizon: usize) -> Vec<f64> {
    let mut v: Vec<f64> = grid.nodes().iter().map(|&w| if w >= 1.0 { 1.0 } else { 0.0 }).collect();
    for _ in 0..horizon {
        v = (0..grid.len()).map(|i| tr.expect(k, i, &v)).collect();
    }
    v
}

/// Solves for the default episode from two-asset moments.
pub fn solve_from_moments(config: &EnvConfig, moments: &Moments, n_nodes: usize, n_alphas: usize) -> Result<PolicyTable, DpError> {
    let set = PortfolioSet::from_moments(moments, n_alphas)?;
    let grid = WealthGrid::build(config, &set, n_nodes)?;
    Ok(solve(&grid, &set, config.horizon))
}

/// Table lookup at the nearest log-wealth node.
pub fn dp_policy_action(table: &PolicyTable, state: &EnvState) -> f64 {
    let t = state.step.min(table.horizon.saturating_sub(1));
    table.alpha(t, table.grid.nearest(state.wealth_ratio()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lookup {
    NearestLog,
    NearestLinear,
}

#[derive(Debug, Clone)]
pub struct DpPolicy {
    pub table: PolicyTable,
    pub lookup: Lookup,
}

impl DpPolicy {
    pub fn new(table: PolicyTable) -> Self {
        Self {
            table,
            lookup: Lookup::NearestLog,
        }
    }
}

impl AllocationPolicy for DpPolicy {
    fn name(&self) -> String {
        "DP".into()
    }

    fn act(&self, state: &EnvState, _realized: &[[f64; 2]]) -> f64 {
        match self.lookup {
            Lookup::NearestLog => dp_policy_action(&self.table, state),
            Lookup::NearestLinear => {
                let t = state.step.min(self.table.horizon.saturating_sub(1));
                self.table.alpha(t, self.table.grid.nearest_linear(state.wealth_ratio()))
            }
        }
    }
}

/// Monte Carlo estimate of the policy's success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl McEstimate {
    fn from_hits(hits: usize, paths: usize) -> Self {
        let p = hits as f64 / paths as f64;
        Self {
            mean: p,
            std_error: (p * (1.0 - p) / paths as f64).sqrt(),
            paths,
        }
    }
}

/// Rolls the table's policy forward on the discretized chain it was solved
/// on: the next node is drawn from the transition band of the chosen action.
pub fn chain_rollout(table: &PolicyTable, tr: &Transitions, start: usize, paths: usize, seed: u64) -> McEstimate {
    let hits: usize = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, p as u64);
            let mut i = start;
            for t in 0..table.horizon {
                let band = &tr.bands[table.action[t][i]][i];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut j = band.probs.len() - 1;
                for (k, &q) in band.probs.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        j = k;
                        break;
                    }
                }
                i = band.start + j;
            }
            usize::from(table.grid.nodes()[i] >= 1.0)
        })
        .sum();
    McEstimate::from_hits(hits, paths)
}

/// Rolls the policy forward on continuous lognormal wealth, looking the
/// action up at the nearest node each month.
pub fn lognormal_rollout(table: &PolicyTable, set: &PortfolioSet, w0: f64, paths: usize, seed: u64) -> McEstimate {
    let hits: usize = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, p as u64);
            let mut lw = w0.ln();
            for t in 0..table.horizon {
                let c = &set.candidates[table.action[t][table.grid.nearest(lw.exp())]];
                let z: f64 = rng.sample(StandardNormal);
                lw += c.log_drift() + c.log_vol() * z;
            }
            usize::from(lw >= 0.0)
        })
        .sum();
    McEstimate::from_hits(hits, paths)
}
