//! Episodic goal-attainment environment.
//!
//! The observation is `(t / T, W_t / W_G)`. Each step the agent chooses the
//! fraction `α ∈ [0, 1]` of wealth held in stock, the portfolio is rebalanced
//! and compounded by one month of returns:
//!
//! ```text
//! W_{t+1} = W_t · (1 + α·R_stock + (1 − α)·R_bond)
//! ```
//!
//! The only reward is the terminal indicator `W_T >= W_G`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory_gen::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("trajectory has {got} steps, horizon is {horizon}")]
    LengthMismatch { got: usize, horizon: usize },
    #[error("episode already finished")]
    Done,
    #[error("invalid config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub goal_wealth: f64,
    pub initial_wealth_ratio: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 120,
            goal_wealth: 1.0,
            initial_wealth_ratio: 0.6,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon < 1 {
            return Err(EnvError::Config("horizon must be >= 1"));
        }
        if !(self.goal_wealth > 0.0) {
            return Err(EnvError::Config("goal wealth must be > 0"));
        }
        if !(self.initial_wealth_ratio > 0.0) {
            return Err(EnvError::Config("initial wealth ratio must be > 0"));
        }
        Ok(())
    }

    pub fn initial_wealth(&self) -> f64 {
        self.initial_wealth_ratio * self.goal_wealth
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub step: usize,
    pub wealth: f64,
    pub horizon: usize,
    pub goal_wealth: f64,
}

impl EnvState {
    pub fn time_fraction(&self) -> f64 {
        self.step as f64 / self.horizon as f64
    }

    pub fn wealth_ratio(&self) -> f64 {
        self.wealth / self.goal_wealth
    }

    pub fn observation(&self) -> [f64; 2] {
        [self.time_fraction(), self.wealth_ratio()]
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon
    }
}

/// Result of one [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

pub fn reset(config: &EnvConfig, trajectory: &Trajectory) -> Result<EnvState, EnvError> {
    config.validate()?;
    if trajectory.len() != config.horizon {
        return Err(EnvError::LengthMismatch {
            got: trajectory.len(),
            horizon: config.horizon,
        });
    }
    Ok(EnvState {
        step: 0,
        wealth: config.initial_wealth(),
        horizon: config.horizon,
        goal_wealth: config.goal_wealth,
    })
}

/// Applies allocation `alpha` (clamped to `[0, 1]`) for one month.
pub fn step(state: &EnvState, alpha: f64, trajectory: &Trajectory) -> Result<Transition, EnvError> {
    if state.is_done() {
        return Err(EnvError::Done);
    }
    let alpha = clamp_unit(alpha);
    let [bond, stock] = trajectory.returns[state.step];
    let gross = 1.0 + alpha * stock + (1.0 - alpha) * bond;
    let next = EnvState {
        step: state.step + 1,
        wealth: state.wealth * gross,
        ..*state
    };
    let done = next.step == next.horizon;
    let reward = if done && next.wealth >= next.goal_wealth {
        1.0
    } else {
        0.0
    };
    Ok(Transition {
        state: next,
        reward,
        done,
    })
}

/// Clamp to `[0, 1]`; NaN maps to 0.
pub fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Runs a whole episode under `policy` and returns the terminal state.
///
/// `policy` sees the current state and the returns realised so far.
pub fn rollout<F>(config: &EnvConfig, trajectory: &Trajectory, mut policy: F) -> Result<(EnvState, f64), EnvError>
where
    F: FnMut(&EnvState, &[[f64; 2]]) -> f64,
{
    let mut state = reset(config, trajectory)?;
    loop {
        let a = policy(&state, &trajectory.returns[..state.step]);
        let tr = step(&state, a, trajectory)?;
        state = tr.state;
        if tr.done {
            return Ok((state, tr.reward));
        }
    }
}
