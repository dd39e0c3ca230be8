//! Closed-form benchmark allocation rules.
//!
//! Mean returns, volatilities and the riskless rate are monthly. Variance
//! budgeting annualises volatility and measures its horizon in years.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbwm_env::{clamp_unit, EnvState};
use crate::trajectory_gen::Moments;

/// Volatility floor used when the running estimate collapses to zero.
pub const VOL_FLOOR: f64 = 1e-6;

/// Minimum in-episode observations before the running volatility is used.
pub const MIN_VOL_OBS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("stock volatility must be > 0")]
    ZeroVolatility,
    #[error("risk aversion parameter must be < 1, got {0}")]
    BadGamma(f64),
    #[error("wealth must be > 0")]
    ZeroWealth,
    #[error("horizon must be > 0")]
    ZeroHorizon,
}

/// Anything that maps the current state to a stock weight in `[0, 1]`.
///
/// `realized` holds the `[bond, stock]` returns already seen this episode.
pub trait AllocationPolicy: Sync {
    fn name(&self) -> String;
    fn act(&self, state: &EnvState, realized: &[[f64; 2]]) -> f64;
}

/// Market inputs shared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyContext {
    pub mu_stock: f64,
    pub mu_bond: f64,
    /// Monthly standard deviation of stock returns.
    pub sigma_stock: f64,
    /// Monthly riskless rate.
    pub riskless: f64,
    /// Episode standard-deviation budget `V` as a fraction of goal wealth.
    pub variance_budget: f64,
    /// Current volatility estimate `σ_t` (monthly).
    pub realized_vol: f64,
}

impl StrategyContext {
    /// Context from training-set moments, using the mean bond return as
    /// the riskless rate.
    pub fn from_moments(m: &Moments) -> Self {
        Self {
            mu_stock: m.mu_stock(),
            mu_bond: m.mu_bond(),
            sigma_stock: m.vol_stock(),
            riskless: m.mu_bond(),
            variance_budget: 0.0,
            realized_vol: m.vol_stock(),
        }
    }
}

/// `1 − t/T`.
pub fn glide_path_action(t: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    clamp_unit(1.0 - t as f64 / horizon as f64)
}

/// Unclamped `(μ − r) / ((1 − γ) σ²)`.
pub fn merton_raw(ctx: &StrategyContext, gamma: f64) -> Result<f64, StrategyError> {
    if !(ctx.sigma_stock > 0.0) {
        return Err(StrategyError::ZeroVolatility);
    }
    if !(gamma < 1.0) {
        return Err(StrategyError::BadGamma(gamma));
    }
    Ok((ctx.mu_stock - ctx.riskless) / ((1.0 - gamma) * ctx.sigma_stock * ctx.sigma_stock))
}

pub fn merton_action(ctx: &StrategyContext, gamma: f64) -> Result<f64, StrategyError> {
    merton_raw(ctx, gamma).map(clamp_unit)
}

/// Months per year, used to annualise monthly volatility.
pub const MONTHS_PER_YEAR: f64 = 12.0;

/// Unclamped `V / (σ_t · √T · X_t)` with `σ_t` annualised from the monthly
/// `ctx.realized_vol` and `T` in years.
pub fn variance_budget_raw(ctx: &StrategyContext, wealth: f64, horizon_years: f64) -> Result<f64, StrategyError> {
    if !(ctx.realized_vol > 0.0) {
        return Err(StrategyError::ZeroVolatility);
    }
    if !(wealth > 0.0) {
        return Err(StrategyError::ZeroWealth);
    }
    if !(horizon_years > 0.0) {
        return Err(StrategyError::ZeroHorizon);
    }
    let annual_vol = ctx.realized_vol * MONTHS_PER_YEAR.sqrt();
    Ok(ctx.variance_budget / (annual_vol * horizon_years.sqrt() * wealth))
}

pub fn variance_budget_action(ctx: &StrategyContext, wealth: f64, horizon_years: f64) -> Result<f64, StrategyError> {
    variance_budget_raw(ctx, wealth, horizon_years).map(clamp_unit)
}

/// Episode budget `V = √(v · T)` for an annual variance budget `v`.
pub fn episode_budget(annual_variance: f64, horizon_years: f64) -> f64 {
    (annual_variance.max(0.0) * horizon_years.max(0.0)).sqrt()
}

/// Sample standard deviation of the stock returns seen so far, or
/// `fallback` with fewer than [`MIN_VOL_OBS`] observations. Never below
/// [`VOL_FLOOR`].
pub fn estimate_running_vol(realized: &[[f64; 2]], fallback: f64) -> f64 {
    if realized.len() < MIN_VOL_OBS {
        return fallback.max(VOL_FLOOR);
    }
    let n = realized.len() as f64;
    let mean = realized.iter().map(|r| r[1]).sum::<f64>() / n;
    let var = realized.iter().map(|r| (r[1] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt().max(VOL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlidePath;

impl AllocationPolicy for GlidePath {
    fn name(&self) -> String {
        "DG".into()
    }

    fn act(&self, state: &EnvState, _realized: &[[f64; 2]]) -> f64 {
        glide_path_action(state.step, state.horizon)
    }
}

/// Constant Merton weight, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonConstant {
    pub gamma: f64,
    alpha: f64,
}

impl MertonConstant {
    pub fn new(ctx: &StrategyContext, gamma: f64) -> Result<Self, StrategyError> {
        Ok(Self {
            gamma,
            alpha: merton_action(ctx, gamma)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl AllocationPolicy for MertonConstant {
    fn name(&self) -> String {
        "MC".into()
    }

    fn act(&self, _state: &EnvState, _realized: &[[f64; 2]]) -> f64 {
        self.alpha
    }
}

/// Variance budgeting with an in-episode volatility estimate.
///
/// The parameter `v` is an annual variance budget in goal units, so the
/// episode standard-deviation budget is `V = √(v · T)`. Wealth enters as
/// the ratio `W_t / W_G` and `T` is the episode length in years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBudget {
    pub ctx: StrategyContext,
    pub annual_variance: f64,
}

impl VarianceBudget {
    pub fn new(ctx: &StrategyContext, annual_variance: f64) -> Self {
        Self {
            ctx: *ctx,
            annual_variance,
        }
    }

    pub fn budget(&self) -> f64 {
        self.annual_variance
    }
}

impl AllocationPolicy for VarianceBudget {
    fn name(&self) -> String {
        "VB".into()
    }

    fn act(&self, state: &EnvState, realized: &[[f64; 2]]) -> f64 {
        let years = state.horizon as f64 / MONTHS_PER_YEAR;
        let ctx = StrategyContext {
            realized_vol: estimate_running_vol(realized, self.ctx.sigma_stock),
            variance_budget: episode_budget(self.annual_variance, years),
            ..self.ctx
        };
        variance_budget_action(&ctx, state.wealth_ratio().max(f64::MIN_POSITIVE), years).unwrap_or(0.0)
    }
}
