//! Shared fixtures for the benchmarks.

use gbwm_core::market_data::split_train_test;
use gbwm_core::synthetic::{synthetic_history, SYNTHETIC_SEED};
use gbwm_core::trajectory_gen::{estimate_moments, Moments};
use gbwm_core::{ReturnSeries, YearMonth};

/// Train and test halves of the synthetic history, split at 1991-01.
pub fn fixture_split() -> (ReturnSeries, ReturnSeries) {
    let s = synthetic_history(SYNTHETIC_SEED);
    split_train_test(&s, YearMonth::new(1991, 1).expect("valid month")).expect("split inside history")
}

pub fn fixture_moments(train: &ReturnSeries) -> Moments {
    estimate_moments(train.bond(), train.stock()).expect("non-degenerate history")
}
