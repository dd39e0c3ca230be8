//! Deterministic stand-in for a monthly stock/bond history.
//!
//! Used when no real return file is supplied. Each era has fixed nominal
//! moments roughly matching long-run US experience; a two-state calm or
//! turbulent regime scales volatilities to give clustering and fat tails.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::market_data::{ReturnSeries, YearMonth};
use crate::rng::substream;

/// Default seed of [`synthetic_history`].
pub const SYNTHETIC_SEED: u64 = 1901;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Era {
    /// First month of the era.
    pub from: YearMonth,
    pub bond_mean: f64,
    pub bond_vol: f64,
    pub stock_mean: f64,
    pub stock_vol: f64,
    pub corr: f64,
}

const CALM_SCALE: f64 = 0.8;
const TURBULENT_SCALE: f64 = 1.6;
const P_CALM_TO_TURBULENT: f64 = 0.03;
const P_TURBULENT_TO_CALM: f64 = 0.12;

pub fn default_eras() -> Vec<Era> {
    vec![
        Era {
            from: YearMonth { year: 1901, month: 1 },
            bond_mean: 0.0036,
            bond_vol: 0.012,
            stock_mean: 0.0085,
            stock_vol: 0.054,
            corr: 0.1,
        },
        Era {
            from: YearMonth { year: 1991, month: 1 },
            bond_mean: 0.0048,
            bond_vol: 0.020,
            stock_mean: 0.0092,
            stock_vol: 0.043,
            corr: 0.05,
        },
    ]
}

/// Monthly returns from `from` through `to` inclusive.
///
/// Within each era the bond and stock columns are shifted and scaled so
/// their sample mean and standard deviation equal the era targets.
pub fn generate(eras: &[Era], from: YearMonth, to: YearMonth, seed: u64) -> ReturnSeries {
    let mut rng = substream(seed, 0);
    let mut bond = Vec::new();
    let mut stock = Vec::new();
    let mut era_of = Vec::new();
    let mut turbulent = false;
    let mut m = from;
    while m <= to {
        let e = eras.iter().rposition(|e| e.from <= m).unwrap_or(0);
        let era = &eras[e];
        let flip = if turbulent { P_TURBULENT_TO_CALM } else { P_CALM_TO_TURBULENT };
        if rng.random::<f64>() < flip {
            turbulent = !turbulent;
        }
        let scale = if turbulent { TURBULENT_SCALE } else { CALM_SCALE };
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let zs = era.corr * z0 + (1.0 - era.corr * era.corr).sqrt() * z1;
        bond.push(scale * z0);
        stock.push(scale * zs);
        era_of.push(e);
        m = m.succ();
    }
    for (e, era) in eras.iter().enumerate() {
        let idx: Vec<usize> = (0..era_of.len()).filter(|&i| era_of[i] == e).collect();
        standardize(&mut bond, &idx, era.bond_mean, era.bond_vol);
        standardize(&mut stock, &idx, era.stock_mean, era.stock_vol);
    }
    ReturnSeries::from_returns(from, bond, stock).expect("synthetic series is valid")
}

fn standardize(x: &mut [f64], idx: &[usize], mean: f64, vol: f64) {
    if idx.len() < 2 {
        idx.iter().for_each(|&i| x[i] = mean);
        return;
    }
    let n = idx.len() as f64;
    let m = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
    let sd = (idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for &i in idx {
        x[i] = (mean + vol * (x[i] - m) / sd).max(-0.5);
    }
}

/// January 1901 through June 2022 with the default eras.
pub fn synthetic_history(seed: u64) -> ReturnSeries {
    generate(
        &default_eras(),
        YearMonth { year: 1901, month: 1 },
        YearMonth { year: 2022, month: 6 },
        seed,
    )
}
