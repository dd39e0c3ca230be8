//! Run configuration file.
//!
//! TOML with one section per module. Every key is optional; omitted keys
//! take the defaults below and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gbwm_core::evaluation::linear_grid;
use gbwm_core::market_data::{self, ColumnSpec, ReturnSeries, YearMonth};
use gbwm_core::synthetic::{synthetic_history, SYNTHETIC_SEED};
use gbwm_core::{EnvConfig, PpoConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "GBWM_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Return file; the built-in synthetic history is used when absent.
    pub path: Option<PathBuf>,
    pub date_column: String,
    pub bond_column: String,
    pub stock_column: String,
    /// First month of the test set.
    pub split: String,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let c = ColumnSpec::default();
        Self {
            path: None,
            date_column: c.date,
            bond_column: c.bond,
            stock_column: c.stock,
            split: "1991-01".into(),
            synthetic_seed: SYNTHETIC_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Estimation windows of the training generator.
    pub train_windows: Vec<usize>,
    /// Seed of the held-out episodes used for checkpoint selection.
    pub holdout_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            train_windows: vec![120],
            holdout_seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub nodes: usize,
    pub alphas: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { nodes: 300, alphas: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    /// Merton risk-aversion parameter.
    pub gamma: f64,
    /// Annual variance budget of variance budgeting.
    pub budget: f64,
    /// Replace `gamma` and `budget` by sweep winners before building tables.
    pub tune: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            gamma: 0.004,
            budget: 0.013,
            tune: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Trajectories per simulated or bootstrapped protocol.
    pub count: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { count: 10_000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub count: usize,
    pub seed: u64,
    /// `from:to:step`
    pub gamma_grid: String,
    pub budget_grid: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            seed: 11,
            gamma_grid: "0.004:0.05:0.002".into(),
            budget_grid: "0.001:0.02:0.001".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    /// Trained actor-critic checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Solved DP table; solved on the fly when absent.
    pub dp_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub env: EnvConfig,
    pub generator: GeneratorConfig,
    pub dp: DpConfig,
    pub ppo: PpoConfig,
    pub strategies: StrategyConfig,
    pub evaluation: EvaluationConfig,
    pub sweep: SweepConfig,
    pub artifacts: ArtifactConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Explicit path, else `$GBWM_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn split_month(&self) -> Result<YearMonth> {
        self.data
            .split
            .parse()
            .with_context(|| format!("bad split month {:?}", self.data.split))
    }

    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            date: self.data.date_column.clone(),
            bond: self.data.bond_column.clone(),
            stock: self.data.stock_column.clone(),
        }
    }

    /// The full series named by `[data]`.
    pub fn series(&self) -> Result<ReturnSeries> {
        match &self.data.path {
            Some(p) => market_data::load_returns(p, &self.columns()).with_context(|| format!("loading {}", p.display())),
            None => Ok(synthetic_history(self.data.synthetic_seed)),
        }
    }

    /// `(train, test)` split at `data.split`.
    pub fn split(&self) -> Result<(ReturnSeries, ReturnSeries)> {
        let s = self.series()?;
        Ok(market_data::split_train_test(&s, self.split_month()?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.split_month()?;
        if self.generator.train_windows.is_empty() {
            bail!("generator.train_windows must not be empty");
        }
        if self.evaluation.count == 0 || self.sweep.count == 0 {
            bail!("trajectory counts must be >= 1");
        }
        parse_grid(&self.sweep.gamma_grid)?;
        parse_grid(&self.sweep.budget_grid)?;
        Ok(())
    }
}

/// Parses `from:to:step` or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("bad number {s:?} in grid {spec:?}")) };
    let grid = match parts.as_slice() {
        [from, to, step] => {
            let (from, to, step) = (num(from)?, num(to)?, num(step)?);
            if step.is_nan() || step <= 0.0 || to < from {
                bail!("grid {spec:?} needs from <= to and step > 0");
            }
            linear_grid(from, to, step)
        }
        [list] => list.split(',').map(num).collect::<Result<_>>()?,
        _ => bail!("grid {spec:?} must be from:to:step or a comma list"),
    };
    if grid.is_empty() {
        bail!("empty grid {spec:?}");
    }
    Ok(grid)
}

/// Parses `24,36,48`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad size {s:?} in {spec:?}")))
        .collect()
}
