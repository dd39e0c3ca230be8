//! Goal-based wealth management research harness.
//!
//! Market data ingestion, return-trajectory generators, a goal-reaching
//! portfolio environment, closed-form benchmark strategies, a dynamic
//! programming solver, a small PPO implementation and the evaluation
//! protocols used to compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dp_solver;
pub mod evaluation;
pub mod gbwm_env;
pub mod gradcheck;
pub mod market_data;
pub mod neural;
pub mod ppo;
pub mod rng;
pub mod strategies;
pub mod synthetic;
pub mod trajectory_gen;

pub use dp_solver::{DpPolicy, Lookup, PolicyTable};
pub use evaluation::{ComparisonTable, EvalProtocol, EvalRow, ProtocolKind, SweepFamily, SweepResult};
pub use gbwm_env::{EnvConfig, EnvState};
pub use market_data::{ColumnSpec, ReturnSeries, YearMonth};
pub use neural::{Adam, Mlp};
pub use ppo::{ActorCritic, ModePolicy, PpoConfig, TrainOutcome};
pub use strategies::{AllocationPolicy, GlidePath, MertonConstant, StrategyContext, VarianceBudget};
pub use trajectory_gen::{EpisodeSource, Generator, Moments, Trajectory, TrajectorySource};
