//! Property tests of the environment and generators.

use gbwm_core::gbwm_env::{clamp_unit, reset, rollout, step, EnvConfig};
use gbwm_core::market_data::{ReturnSeries, YearMonth};
use gbwm_core::rng::substream;
use gbwm_core::trajectory_gen::*;
use proptest::prelude::*;

fn traj(rows: Vec<(f64, f64)>) -> Trajectory {
    Trajectory {
        returns: rows.into_iter().map(|(b, s)| [b, s]).collect(),
        provenance: Provenance::Historical { start: 0 },
    }
}

fn rows(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.05..0.05f64, -0.3..0.3f64), n)
}

proptest! {
    #[test]
    fn wealth_follows_the_update_rule(r in rows(12), alphas in prop::collection::vec(-0.5..1.5f64, 12)) {
        let cfg = EnvConfig { horizon: 12, goal_wealth: 2.0, initial_wealth_ratio: 0.7 };
        let t = traj(r);
        let mut s = reset(&cfg, &t).unwrap();
        let mut w = cfg.initial_wealth();
        for (k, &a) in alphas.iter().enumerate() {
            let tr = step(&s, a, &t).unwrap();
            let c = clamp_unit(a);
            w *= 1.0 + c * t.returns[k][1] + (1.0 - c) * t.returns[k][0];
            prop_assert!((tr.state.wealth - w).abs() <= 1e-12 * w.abs().max(1.0));
            prop_assert_eq!(tr.done, k == 11);
            if !tr.done {
                prop_assert_eq!(tr.reward, 0.0);
            } else {
                prop_assert_eq!(tr.reward, f64::from(u8::from(w >= cfg.goal_wealth)));
            }
            s = tr.state;
        }
        prop_assert!(step(&s, 0.5, &t).is_err());
    }

    #[test]
    fn out_of_range_actions_act_as_their_clamp(r in rows(6), a in -3.0..3.0f64) {
        let cfg = EnvConfig { horizon: 6, ..Default::default() };
        let t = traj(r);
        let (x, rx) = rollout(&cfg, &t, |_, _| a).unwrap();
        let (y, ry) = rollout(&cfg, &t, |_, _| clamp_unit(a)).unwrap();
        prop_assert_eq!(x, y);
        prop_assert_eq!(rx, ry);
    }

    #[test]
    fn observation_is_time_fraction_and_wealth_ratio(r in rows(8), a in 0.0..1.0f64) {
        let cfg = EnvConfig { horizon: 8, goal_wealth: 3.0, initial_wealth_ratio: 0.5 };
        let t = traj(r);
        let mut s = reset(&cfg, &t).unwrap();
        prop_assert_eq!(s.observation(), [0.0, 0.5]);
        for k in 1..=8 {
            s = step(&s, a, &t).unwrap().state;
            let [tf, wr] = s.observation();
            prop_assert_eq!(tf, k as f64 / 8.0);
            prop_assert!((wr - s.wealth / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn policy_sees_only_realized_returns(r in rows(10)) {
        let cfg = EnvConfig { horizon: 10, ..Default::default() };
        let t = traj(r);
        let full = t.returns.clone();
        rollout(&cfg, &t, |s, seen| {
            assert_eq!(seen.len(), s.step);
            assert_eq!(seen, &full[..s.step]);
            0.5
        }).unwrap();
    }

    #[test]
    fn bootstrap_trajectories_have_requested_length(
        n in 3usize..80,
        len in 1usize..200,
        blocks in prop::sample::subsequence(vec![1usize, 2, 3, 4, 5, 6], 1..4),
        seed in any::<u64>(),
    ) {
        let bond: Vec<f64> = (0..n).map(|i| i as f64 * 1e-4).collect();
        let stock: Vec<f64> = (0..n).map(|i| -(i as f64) * 1e-4).collect();
        let s = ReturnSeries::from_returns(YearMonth::new(2000, 1).unwrap(), bond, stock).unwrap();
        let mut rng = substream(seed, 0);
        let result = block_bootstrap_trajectory(&s, &blocks, len, &mut rng);
        if blocks.iter().any(|&b| b > n) {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let t = result.unwrap();
        prop_assert_eq!(t.len(), len);
        for row in &t.returns {
            let i = (row[0] / 1e-4).round() as usize;
            prop_assert_eq!(*row, s.row(i));
        }
    }

    #[test]
    fn gaussian_trajectories_are_finite(seed in any::<u64>(), window in 12usize..60) {
        let bond: Vec<f64> = (0..100).map(|i| 0.003 + 0.01 * ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let stock: Vec<f64> = (0..100).map(|i| 0.008 + 0.05 * ((i * 11 % 9) as f64 - 4.0) / 4.0).collect();
        let s = ReturnSeries::from_returns(YearMonth::new(2000, 1).unwrap(), bond, stock).unwrap();
        let mut rng = substream(seed, 0);
        let t = simulate_trajectory(&s, window, 24, &mut rng).unwrap();
        prop_assert_eq!(t.len(), 24);
        prop_assert!(t.returns.iter().all(|r| r[0].is_finite() && r[1].is_finite()));
    }

    #[test]
    fn fitted_covariance_is_symmetric_psd(r in rows(30)) {
        let (b, s): (Vec<f64>, Vec<f64>) = r.into_iter().unzip();
        let m = estimate_moments(&b, &s).unwrap();
        prop_assert_eq!(m.sigma[0][1], m.sigma[1][0]);
        prop_assert!(m.sigma[0][0] >= 0.0 && m.sigma[1][1] >= 0.0);
        let det = m.sigma[0][0] * m.sigma[1][1] - m.sigma[0][1] * m.sigma[1][0];
        prop_assert!(det >= -1e-15);
    }
}
