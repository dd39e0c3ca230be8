//! Episode trajectory generators.
//!
//! Three sources feed the environment:
//!
//! - **Gaussian**: pick an end index `k`, fit mean and covariance on the
//!   returns `R[k-n] ..= R[k]` and draw `L` i.i.d. bivariate normal rows.
//! - **Block bootstrap**: concatenate randomly placed blocks of consecutive
//!   historical rows (bond and stock kept paired) and truncate to `L`.
//! - **Historical**: every overlapping window of `L` consecutive rows.
//!
//! Gaussian draws are clamped at [`RETURN_FLOOR`] so wealth stays positive.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::ReturnSeries;

/// Lowest simple return a sampled row may take.
pub const RETURN_FLOOR: f64 = -0.99;

/// Largest negative diagonal / pivot treated as zero during factorisation.
pub const CHOLESKY_JITTER: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("estimation window needs at least 2 rows, got {0}")]
    WindowTooShort(usize),
    #[error("series of length {len} too short for window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("covariance matrix is not positive semidefinite")]
    NotPsd,
    #[error("empty choice set")]
    EmptyChoices,
    #[error("block size {block} impossible for series of length {len}")]
    BadBlock { block: usize, len: usize },
    #[error("trajectory length must be >= 1")]
    ZeroLength,
}

/// Mean vector and covariance of monthly `(bond, stock)` returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl Moments {
    pub fn new(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Self {
        Self { mu, sigma }
    }

    pub fn mu_bond(&self) -> f64 {
        self.mu[0]
    }

    pub fn mu_stock(&self) -> f64 {
        self.mu[1]
    }

    pub fn vol_bond(&self) -> f64 {
        self.sigma[0][0].max(0.0).sqrt()
    }

    pub fn vol_stock(&self) -> f64 {
        self.sigma[1][1].max(0.0).sqrt()
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2], GenError> {
        let s = &self.sigma;
        if (s[0][1] - s[1][0]).abs() > CHOLESKY_JITTER {
            return Err(GenError::NotPsd);
        }
        let pivot = |v: f64| {
            if v >= 0.0 {
                Ok(v.sqrt())
            } else if v >= -CHOLESKY_JITTER {
                Ok(0.0)
            } else {
                Err(GenError::NotPsd)
            }
        };
        let l00 = pivot(s[0][0])?;
        let l10 = if l00 > 0.0 {
            s[1][0] / l00
        } else if s[1][0].abs() <= CHOLESKY_JITTER {
            0.0
        } else {
            return Err(GenError::NotPsd);
        };
        let l11 = pivot(s[1][1] - l10 * l10)?;
        Ok([[l00, 0.0], [l10, l11]])
    }
}

/// Sample mean and unbiased (n−1) covariance of paired rows.
pub fn estimate_moments(bond: &[f64], stock: &[f64]) -> Result<Moments, GenError> {
    let n = bond.len().min(stock.len());
    if n < 2 {
        return Err(GenError::WindowTooShort(n));
    }
    let nf = n as f64;
    let mb = bond[..n].iter().sum::<f64>() / nf;
    let ms = stock[..n].iter().sum::<f64>() / nf;
    let (mut bb, mut bs, mut ss) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (db, ds) = (bond[i] - mb, stock[i] - ms);
        bb += db * db;
        bs += db * ds;
        ss += ds * ds;
    }
    let d = nf - 1.0;
    Ok(Moments {
        mu: [mb, ms],
        sigma: [[bb / d, bs / d], [bs / d, ss / d]],
    })
}

/// Draws from a fixed bivariate normal with a precomputed factor.
#[derive(Debug, Clone, Copy)]
pub struct MvnSampler {
    mu: [f64; 2],
    chol: [[f64; 2]; 2],
}

impl MvnSampler {
    pub fn new(m: &Moments) -> Result<Self, GenError> {
        Ok(Self {
            mu: m.mu,
            chol: m.cholesky()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let b = self.mu[0] + self.chol[0][0] * z0;
        let s = self.mu[1] + self.chol[1][0] * z0 + self.chol[1][1] * z1;
        [b.max(RETURN_FLOOR), s.max(RETURN_FLOOR)]
    }
}

/// One `(bond, stock)` draw from `N(mu, sigma)`, clamped at the return floor.
pub fn sample_mvn<R: Rng + ?Sized>(m: &Moments, rng: &mut R) -> Result<[f64; 2], GenError> {
    Ok(MvnSampler::new(m)?.sample(rng))
}

/// Contiguous run of source rows used by the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    /// Gaussian fit on the window ending at 1-based index `end_index`.
    Simulated { window: usize, end_index: usize },
    Bootstrap { blocks: Vec<Block> },
    Historical { start: usize },
}

/// One episode of paired `[bond, stock]` returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub returns: Vec<[f64; 2]>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Gaussian trajectory fitted at a given end index.
///
/// `end_index` is 1-based and the fit window is the `window + 1` rows
/// `R[k-n] ..= R[k]`, so `end_index` must lie in `window+1 ..= N`.
pub fn simulate_from_index<R: Rng + ?Sized>(
    series: &ReturnSeries,
    window: usize,
    end_index: usize,
    length: usize,
    rng: &mut R,
) -> Result<Trajectory, GenError> {
    if window < 2 {
        return Err(GenError::WindowTooShort(window));
    }
    if length == 0 {
        return Err(GenError::ZeroLength);
    }
    if end_index <= window || end_index > series.len() {
        return Err(GenError::SeriesTooShort {
            len: series.len(),
            window,
        });
    }
    let lo = end_index - window - 1;
    let hi = end_index;
    let m = estimate_moments(&series.bond()[lo..hi], &series.stock()[lo..hi])?;
    let sampler = MvnSampler::new(&m)?;
    let returns = (0..length).map(|_| sampler.sample(rng)).collect();
    Ok(Trajectory {
        returns,
        provenance: Provenance::Simulated { window, end_index },
    })
}

/// Rolling-window Gaussian trajectory with `k` drawn uniformly from `n+1 ..= N`.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    series: &ReturnSeries,
    window: usize,
    length: usize,
    rng: &mut R,
) -> Result<Trajectory, GenError> {
    if window < 2 {
        return Err(GenError::WindowTooShort(window));
    }
    if series.len() <= window {
        return Err(GenError::SeriesTooShort {
            len: series.len(),
            window,
        });
    }
    let k = rng.random_range(window + 1..=series.len());
    simulate_from_index(series, window, k, length, rng)
}

/// Picks a window size uniformly per trajectory, then simulates.
pub fn simulate_trajectory_mixed<R: Rng + ?Sized>(
    series: &ReturnSeries,
    windows: &[usize],
    length: usize,
    rng: &mut R,
) -> Result<Trajectory, GenError> {
    if windows.is_empty() {
        return Err(GenError::EmptyChoices);
    }
    for &w in windows {
        if w < 2 {
            return Err(GenError::WindowTooShort(w));
        }
        if w >= series.len() {
            return Err(GenError::SeriesTooShort {
                len: series.len(),
                window: w,
            });
        }
    }
    let w = windows[rng.random_range(0..windows.len())];
    simulate_trajectory(series, w, length, rng)
}

/// Non-circular block bootstrap.
pub fn block_bootstrap_trajectory<R: Rng + ?Sized>(
    series: &ReturnSeries,
    block_sizes: &[usize],
    length: usize,
    rng: &mut R,
) -> Result<Trajectory, GenError> {
    if block_sizes.is_empty() {
        return Err(GenError::EmptyChoices);
    }
    if length == 0 {
        return Err(GenError::ZeroLength);
    }
    let n = series.len();
    for &b in block_sizes {
        if b == 0 || b > n {
            return Err(GenError::BadBlock { block: b, len: n });
        }
    }
    let mut returns = Vec::with_capacity(length);
    let mut blocks = Vec::new();
    while returns.len() < length {
        let b = block_sizes[rng.random_range(0..block_sizes.len())];
        let start = rng.random_range(0..=n - b);
        let take = b.min(length - returns.len());
        returns.extend((start..start + take).map(|i| series.row(i)));
        blocks.push(Block { start, len: take });
    }
    Ok(Trajectory {
        returns,
        provenance: Provenance::Bootstrap { blocks },
    })
}

/// Number of overlapping windows of `length` rows.
pub fn historical_window_count(series_len: usize, length: usize) -> usize {
    if length == 0 || series_len < length {
        0
    } else {
        series_len - length + 1
    }
}

/// The `start`-th overlapping historical window.
pub fn historical_window(series: &ReturnSeries, start: usize, length: usize) -> Result<Trajectory, GenError> {
    if length == 0 {
        return Err(GenError::ZeroLength);
    }
    if start + length > series.len() {
        return Err(GenError::SeriesTooShort {
            len: series.len(),
            window: length,
        });
    }
    Ok(Trajectory {
        returns: (start..start + length).map(|i| series.row(i)).collect(),
        provenance: Provenance::Historical { start },
    })
}

/// All overlapping windows, in order.
pub fn historical_windows(series: &ReturnSeries, length: usize) -> Result<Vec<Trajectory>, GenError> {
    if length == 0 {
        return Err(GenError::ZeroLength);
    }
    if series.len() < length {
        return Err(GenError::SeriesTooShort {
            len: series.len(),
            window: length,
        });
    }
    (0..historical_window_count(series.len(), length))
        .map(|s| historical_window(series, s, length))
        .collect()
}

/// How a [`TrajectorySource`] produces episodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Generator {
    /// Rolling-window Gaussian; one window size drawn per trajectory.
    Gaussian { windows: Vec<usize> },
    /// Block bootstrap; one block size drawn per block.
    Bootstrap { blocks: Vec<usize> },
    /// Overlapping historical windows, in order.
    Historical,
}

/// Indexed supply of episode trajectories.
pub trait EpisodeSource: Sync {
    fn episode(&self, index: u64) -> Result<Trajectory, GenError>;

    /// Number of distinct episodes, if finite.
    fn finite_len(&self) -> Option<usize> {
        None
    }
}

/// A generator bound to a series, an episode length and a seed.
///
/// Episode `i` draws from its own random stream `(seed, i)`, so two
/// consumers asking for the same index see the same trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySource<'a> {
    pub series: &'a ReturnSeries,
    pub generator: Generator,
    pub length: usize,
    pub seed: u64,
}

impl<'a> TrajectorySource<'a> {
    pub fn new(series: &'a ReturnSeries, generator: Generator, length: usize, seed: u64) -> Result<Self, GenError> {
        let src = Self {
            series,
            generator,
            length,
            seed,
        };
        src.validate()?;
        Ok(src)
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.length == 0 {
            return Err(GenError::ZeroLength);
        }
        let n = self.series.len();
        match &self.generator {
            Generator::Gaussian { windows } => {
                if windows.is_empty() {
                    return Err(GenError::EmptyChoices);
                }
                for &w in windows {
                    if w < 2 {
                        return Err(GenError::WindowTooShort(w));
                    }
                    if w >= n {
                        return Err(GenError::SeriesTooShort { len: n, window: w });
                    }
                }
            }
            Generator::Bootstrap { blocks } => {
                if blocks.is_empty() {
                    return Err(GenError::EmptyChoices);
                }
                if let Some(&b) = blocks.iter().find(|&&b| b == 0 || b > n) {
                    return Err(GenError::BadBlock { block: b, len: n });
                }
            }
            Generator::Historical => {
                if n < self.length {
                    return Err(GenError::SeriesTooShort {
                        len: n,
                        window: self.length,
                    });
                }
            }
        }
        Ok(())
    }
}

impl EpisodeSource for TrajectorySource<'_> {
    fn episode(&self, index: u64) -> Result<Trajectory, GenError> {
        let mut rng = crate::rng::substream(self.seed, index);
        match &self.generator {
            Generator::Gaussian { windows } => simulate_trajectory_mixed(self.series, windows, self.length, &mut rng),
            Generator::Bootstrap { blocks } => block_bootstrap_trajectory(self.series, blocks, self.length, &mut rng),
            Generator::Historical => historical_window(self.series, index as usize, self.length),
        }
    }

    fn finite_len(&self) -> Option<usize> {
        match self.generator {
            Generator::Historical => Some(historical_window_count(self.series.len(), self.length)),
            _ => None,
        }
    }
}
