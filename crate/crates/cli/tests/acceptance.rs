//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Uses the synthetic history unless `GBWM_DATA` names a monthly CSV with
//! `date,bond_return,stock_return` columns. Criteria 6 and 7 train a
//! 200k-episode agent and take several minutes.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use gbwm_cli::RunConfig;
use gbwm_core::dp_solver::{self, chain_rollout, PortfolioSet, Transitions, WealthGrid};
use gbwm_core::evaluation::{self, build_table, sweep_parameter, table_protocols, EvalProtocol, SweepFamily};
use gbwm_core::gbwm_env::{EnvConfig, EnvState};
use gbwm_core::gradcheck::{mlp_error, surrogate_error};
use gbwm_core::ppo::{self, ActorCritic, ModePolicy, PpoConfig};
use gbwm_core::rng::substream;
use gbwm_core::strategies::*;
use gbwm_core::trajectory_gen::*;
use gbwm_core::{DpPolicy, ReturnSeries};

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn report(&mut self, id: &str, name: &str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {verdict} {name}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn formula_exactness() -> (bool, String) {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut check = |got: f64, want: f64| {
        checked += 1;
        worst = worst.max((got - want).abs());
        ok &= close(got, want);
    };

    for horizon in [1usize, 12, 120, 360] {
        for t in 0..=horizon + 2 {
            let want = (1.0 - t as f64 / horizon as f64).clamp(0.0, 1.0);
            check(glide_path_action(t, horizon), want);
            let s = EnvState { step: t, wealth: 0.6, horizon, goal_wealth: 1.0 };
            check(GlidePath.act(&s, &[]), want);
        }
    }

    let markets = [
        (0.008, 0.004, 0.05),
        (0.0085, 0.0036, 0.054),
        (0.004, 0.0035, 0.06),
        (0.002, 0.004, 0.04),
        (0.01, 0.002, 0.2),
        (0.004, 0.004, 0.05),
    ];
    for &(ms, mb, sd) in &markets {
        let ctx = StrategyContext {
            mu_stock: ms,
            mu_bond: mb,
            sigma_stock: sd,
            riskless: mb,
            variance_budget: 0.0,
            realized_vol: sd,
        };
        for gamma in [-2.0, -0.5, 0.0, 0.004, 0.02, 0.05, 0.5, 0.9] {
            let want = ((ms - mb) / ((1.0 - gamma) * sd * sd)).clamp(0.0, 1.0);
            check(merton_action(&ctx, gamma).unwrap(), want);
            check(MertonConstant::new(&ctx, gamma).unwrap().act(&EnvState { step: 5, wealth: 1.0, horizon: 120, goal_wealth: 1.0 }, &[]), want);
        }
        for v in [0.0, 0.001, 0.013, 0.02, 0.5] {
            for x in [0.05, 0.3, 0.6, 1.0, 1.7, 4.0] {
                for months in [12usize, 60, 120] {
                    let years = months as f64 / 12.0;
                    let budget = (v * years).sqrt();
                    let want = (budget / (sd * 12f64.sqrt() * years.sqrt() * x)).clamp(0.0, 1.0);
                    let ctx = StrategyContext { variance_budget: budget, ..ctx };
                    check(variance_budget_action(&ctx, x, years).unwrap(), want);
                    let s = EnvState { step: 0, wealth: x, horizon: months, goal_wealth: 1.0 };
                    check(VarianceBudget::new(&ctx, v).act(&s, &[]), want);
                }
            }
        }
    }

    // in-episode volatility once enough returns are observed
    let realized: Vec<[f64; 2]> = (0..24).map(|i| [0.003, 0.01 * ((i * 5 % 7) as f64 - 3.0)]).collect();
    let n = realized.len() as f64;
    let mean = realized.iter().map(|r| r[1]).sum::<f64>() / n;
    let sd = (realized.iter().map(|r| (r[1] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ctx = StrategyContext {
        mu_stock: 0.008,
        mu_bond: 0.004,
        sigma_stock: 0.05,
        riskless: 0.004,
        variance_budget: 0.0,
        realized_vol: 0.05,
    };
    for x in [0.2, 0.6, 1.1] {
        let s = EnvState { step: 24, wealth: x, horizon: 120, goal_wealth: 1.0 };
        check(VarianceBudget::new(&ctx, 0.013).act(&s, &realized), (0.013f64.sqrt() / (sd * 12f64.sqrt() * x)).clamp(0.0, 1.0));
    }

    // plug-in: V = 0.013, σ = 0.04 monthly, T = 10 years, X = 0.6
    let plug = StrategyContext { variance_budget: 0.013, realized_vol: 0.04, ..ctx };
    check(variance_budget_raw(&plug, 0.6, 10.0).unwrap(), 0.013 / (0.04 * 12f64.sqrt() * 10f64.sqrt() * 0.6));

    (ok, format!("{checked} fixtures, max abs error {worst:.1e}"))
}

fn gradient_checks() -> (bool, String) {
    let cfg = PpoConfig { entropy_coef: 0.01, ..Default::default() };
    let mut worst = [0.0f64; 3];
    for seed in 0..100 {
        worst[0] = worst[0].max(mlp_error(&[2, 6, 6, 2], seed));
        worst[1] = worst[1].max(mlp_error(&[2, 6, 6, 1], seed));
        worst[2] = worst[2].max(surrogate_error(seed, &cfg).0);
    }
    (
        worst.iter().all(|&e| e < 1e-4),
        format!("max relative error actor {:.1e}, critic {:.1e}, surrogate {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn simulator_fidelity(series: &ReturnSeries) -> (bool, String) {
    let m = estimate_moments(series.bond(), series.stock()).unwrap();
    let sampler = MvnSampler::new(&m).unwrap();
    let mut rng = substream(2024, 0);
    let n = 100_000;
    let draws: Vec<[f64; 2]> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let nf = n as f64;
    let mean = [0, 1].map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / nf);
    let mut worst_z: f64 = 0.0;
    for j in 0..2 {
        worst_z = worst_z.max((mean[j] - m.mu[j]).abs() / (m.sigma[j][j] / nf).sqrt());
    }
    for a in 0..2 {
        for b in a..2 {
            let cov = draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).sum::<f64>() / (nf - 1.0);
            let se = ((m.sigma[a][b].powi(2) + m.sigma[a][a] * m.sigma[b][b]) / nf).sqrt();
            worst_z = worst_z.max((cov - m.sigma[a][b]).abs() / se);
        }
    }

    let mut rows_ok = true;
    let mut runs = 0;
    for blocks in [vec![1], vec![2], vec![1, 2, 3], vec![4, 5, 6]] {
        for i in 0..500u64 {
            let mut rng = substream(99, i);
            let t = block_bootstrap_trajectory(series, &blocks, 120, &mut rng).unwrap();
            let Provenance::Bootstrap { blocks: used } = &t.provenance else {
                rows_ok = false;
                continue;
            };
            let mut pos = 0;
            for b in used {
                for j in 0..b.len {
                    rows_ok &= b.start + j < series.len() && t.returns[pos + j] == series.row(b.start + j);
                }
                pos += b.len;
                runs += 1;
            }
            rows_ok &= pos == 120;
        }
    }
    (
        worst_z < 4.0 && rows_ok,
        format!("max |z| of mean/cov {worst_z:.2} (< 4); {runs} bootstrap runs contiguous in source: {rows_ok}"),
    )
}

fn dp_self_consistency(env: &EnvConfig, m: &Moments, nodes: usize, alphas: usize) -> (bool, String) {
    let set = PortfolioSet::from_moments(m, alphas).unwrap();
    let grid = WealthGrid::build(env, &set, nodes).unwrap();
    let tr = Transitions::build(&grid, &set);
    let table = dp_solver::solve_with(&grid, &set, &tr, env.horizon);
    let start = grid.nearest(env.initial_wealth_ratio);
    let root = table.value[0][start];
    let mc = chain_rollout(&table, &tr, start, 100_000, 4242);
    let mc_ok = (mc.mean - root).abs() < 3.0 * mc.std_error;
    let shape_ok = table
        .value
        .iter()
        .all(|row| row.windows(2).all(|w| w[0] <= w[1] + 1e-12) && row.iter().all(|v| (0.0..=1.0).contains(v)));
    let r200 = dp_solver::solve_from_moments(env, m, 200, alphas).unwrap().root_value(env.initial_wealth_ratio);
    let r400 = dp_solver::solve_from_moments(env, m, 400, alphas).unwrap().root_value(env.initial_wealth_ratio);
    let refine_ok = (r200 - r400).abs() < 0.01;
    let gbm = dp_solver::lognormal_rollout(&table, &set, env.initial_wealth_ratio, 100_000, 4243);
    (
        mc_ok && shape_ok && refine_ok,
        format!(
            "root {root:.4}, chain MC {:.4} ± {:.4} (|Δ| {:.2} SE); monotone and bounded: {shape_ok}; 200→400 nodes {r200:.4}→{r400:.4}; continuous-wealth MC {:.4}",
            mc.mean,
            mc.std_error,
            (mc.mean - root).abs() / mc.std_error,
            gbm.mean
        ),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gbwm"))
        .args(args)
        .current_dir(dir)
        .env_remove("GBWM_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("gbwm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism(data: Option<&Path>) -> (bool, String) {
    let data_line = data.map(|p| format!("path = {:?}\n", p.display().to_string())).unwrap_or_default();
    let config = format!(
        "[data]\n{data_line}\n[ppo]\ntotal_episodes = 640\neval_interval = 320\neval_episodes = 100\n\n[evaluation]\ncount = 300\n\n[sweep]\ncount = 300\ngamma_grid = \"0.004:0.012:0.004\"\nbudget_grid = \"0.005,0.01,0.015\"\n\n[dp]\nnodes = 120\nalphas = 11\n"
    );
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--mode", "bootstrap", "--blocks", "1,2,3", "--count", "20", "--out", "sim.csv"],
        vec!["simulate", "--mode", "gaussian", "--windows", "24,36", "--count", "20", "--out", "gauss.csv"],
        vec!["dp-solve", "--out", "dp.json"],
        vec!["train", "--out", "ck.json"],
        vec!["evaluate", "--policy", "vb", "--protocol", "simulated:36", "--out", "eval.csv", "--glide-path", "glide.csv"],
        vec!["evaluate", "--policy", "rl", "--checkpoint", "ck.json", "--protocol", "historical", "--out", "eval_rl.csv"],
        vec!["sweep", "--strategy", "vb", "--out", "sweep.csv"],
        vec!["table", "--dp-table", "dp.json", "--checkpoint", "ck.json", "--out", "table.csv", "--json", "table.json"],
        vec!["policy-grid", "--policy", "dp", "--dp-table", "dp.json", "--out", "grid.csv"],
    ];
    let outputs = [
        "sim.csv", "gauss.csv", "dp.json", "ck.json", "ck.json.curve.csv", "eval.csv", "glide.csv", "eval_rl.csv", "sweep.csv",
        "table.csv", "table.json", "grid.csv",
    ];
    let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for _ in 0..2 {
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return (false, e.to_string()),
        };
        if let Err(e) = std::fs::write(dir.path().join("run.toml"), &config) {
            return (false, e.to_string());
        }
        for c in &commands {
            let mut args = vec!["--config", "run.toml", "--workers", "1"];
            args.extend_from_slice(c);
            if let Err(e) = run_cli(&args, dir.path()) {
                return (false, e);
            }
        }
        let mut snap = Vec::new();
        for name in outputs {
            for f in [name.to_string(), format!("{name}.meta.json")] {
                match std::fs::read(dir.path().join(&f)) {
                    Ok(b) => snap.push((f, b)),
                    Err(e) => return (false, format!("{f}: {e}")),
                }
            }
        }
        snapshots.push(snap);
    }
    let differing: Vec<&str> = snapshots[0]
        .iter()
        .zip(&snapshots[1])
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    (
        differing.is_empty(),
        format!(
            "{} commands run twice with --workers 1, {} files compared, differing: {:?}",
            commands.len(),
            snapshots[0].len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: Vec::new() };
    let mut cfg = RunConfig::default();
    let data: Option<PathBuf> = std::env::var_os("GBWM_DATA").map(PathBuf::from);
    cfg.data.path = data.clone();
    let label = match &data {
        Some(p) => format!("data {}", p.display()),
        None => format!("synthetic history (seed {})", cfg.data.synthetic_seed),
    };
    println!("acceptance suite on {label}");

    let t = Instant::now();
    let (ok, d) = formula_exactness();
    suite.report("1", "formula exactness", ok, d, t);

    let t = Instant::now();
    let (ok, d) = gradient_checks();
    suite.report("2", "gradient correctness", ok, d, t);

    let (train, test) = match cfg.split() {
        Ok(s) => s,
        Err(e) => {
            println!("cannot load data: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let env = cfg.env;

    let t = Instant::now();
    let (ok, d) = simulator_fidelity(&train);
    suite.report("3", "simulator fidelity", ok, d, t);

    let m = estimate_moments(train.bond(), train.stock()).unwrap();
    let t = Instant::now();
    let (ok, d) = dp_self_consistency(&env, &m, cfg.dp.nodes, cfg.dp.alphas);
    suite.report("4", "DP self-consistency", ok, d, t);

    // Benchmarks and the table without RL.
    let t = Instant::now();
    let ctx = StrategyContext::from_moments(&m);
    let dp = DpPolicy::new(dp_solver::solve_from_moments(&env, &m, cfg.dp.nodes, cfg.dp.alphas).unwrap());
    let mc = MertonConstant::new(&ctx, cfg.strategies.gamma).unwrap();
    let vb = VarianceBudget::new(&ctx, cfg.strategies.budget);
    let protocols = table_protocols(cfg.evaluation.count, cfg.evaluation.seed);
    let boot1 = protocols
        .iter()
        .position(|p| *p == EvalProtocol::bootstrap(&[1], cfg.evaluation.count, cfg.evaluation.seed))
        .unwrap();
    let bench: Vec<(String, Option<&dyn AllocationPolicy>)> = vec![
        ("DG".into(), Some(&GlidePath)),
        ("MC".into(), Some(&mc)),
        ("VB".into(), Some(&vb)),
        ("DP".into(), Some(&dp)),
    ];
    let bench_table = build_table(&bench, &protocols, &test, &env).unwrap();
    let published = [("DG", 0.792), ("MC", 0.807), ("VB", 0.872), ("DP", 0.889)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, want) in published {
        let got = bench_table.get(name, boot1).unwrap();
        ok &= (got - want).abs() <= 0.05;
        parts.push(format!("{name} {:.1}% (published {:.1}%)", 100.0 * got, 100.0 * want));
    }
    let g = |n: &str| bench_table.get(n, boot1).unwrap();
    let order = g("DP") >= g("VB") - 0.02 && g("VB") >= g("MC") - 0.02;
    ok &= order;
    suite.report(
        "5",
        "benchmark ordering, bootstrap block 1",
        ok,
        format!("{}; DP ≥ VB ≥ MC within 2pp: {order}; {label}", parts.join(", ")),
        t,
    );

    // Agent.
    let t = Instant::now();
    let gen = Generator::Gaussian { windows: cfg.generator.train_windows.clone() };
    let source = TrajectorySource::new(&train, gen.clone(), env.horizon, cfg.ppo.seed).unwrap();
    let holdout = TrajectorySource::new(&train, gen, env.horizon, cfg.generator.holdout_seed).unwrap();
    let outcome = ppo::train_from(ActorCritic::new(cfg.ppo.seed), &cfg.ppo, &env, &source, &holdout, |_| {}).unwrap();
    let train_secs = t.elapsed().as_secs_f64();
    let rl = ModePolicy(outcome.best.clone());
    let rl_only: Vec<(String, Option<&dyn AllocationPolicy>)> = vec![("RL".into(), Some(&rl))];
    let rl_table = build_table(&rl_only, &protocols, &test, &env).unwrap();
    let mut ok = true;
    let mut cells = Vec::new();
    for (c, col) in bench_table.columns.iter().enumerate() {
        let best = ["DG", "MC", "VB", "DP"].iter().map(|n| bench_table.get(n, c).unwrap()).fold(f64::MIN, f64::max);
        let r = rl_table.get("RL", c).unwrap();
        ok &= r >= best - 0.02;
        cells.push(format!("{col} {:.1}/{:.1}", 100.0 * r, 100.0 * best));
    }
    let hist = protocols.iter().position(|p| *p == EvalProtocol::historical()).unwrap();
    let margin = rl_table.get("RL", hist).unwrap() - bench_table.get("DG", hist).unwrap();
    ok &= margin >= 0.05;
    suite.report(
        "6",
        "RL superiority",
        ok,
        format!(
            "RL/best benchmark %: {}; RL − DG on historical {:+.1}pp; {} episodes trained in {train_secs:.0}s, best held-out {:.4}",
            cells.join(", "),
            100.0 * margin,
            cfg.ppo.total_episodes,
            outcome.best_eval_success
        ),
        t,
    );

    let t = Instant::now();
    let low = ppo::mode_action(&outcome.best, [0.9, 0.7]);
    let high = ppo::mode_action(&outcome.best, [0.9, 1.2]);
    let sim36 = EvalProtocol::simulated(&[36], cfg.evaluation.count, cfg.evaluation.seed);
    let path = evaluation::glide_path(&rl, &sim36, &test, &env).unwrap();
    let k = 30.min(path.len());
    let first = path[..k].iter().sum::<f64>() / k as f64;
    let last = path[path.len() - k..].iter().sum::<f64>() / k as f64;
    suite.report(
        "7",
        "policy shape",
        low > high && first > last,
        format!("α(0.9, 0.7) = {low:.3} > α(0.9, 1.2) = {high:.3}; simulated-36 glide path first-30 mean {first:.3} > last-30 mean {last:.3}"),
        t,
    );

    let t = Instant::now();
    let sweep_src = TrajectorySource::new(
        &train,
        Generator::Gaussian { windows: cfg.generator.train_windows.clone() },
        env.horizon,
        cfg.sweep.seed,
    )
    .unwrap();
    let trajs: Vec<Trajectory> = (0..cfg.sweep.count as u64).map(|i| sweep_src.episode(i).unwrap()).collect();
    let gammas = gbwm_cli::config::parse_grid(&cfg.sweep.gamma_grid).unwrap();
    let budgets = gbwm_cli::config::parse_grid(&cfg.sweep.budget_grid).unwrap();
    let merton = sweep_parameter(SweepFamily::Merton, &gammas, &ctx, &trajs, &env).unwrap();
    let vbs = sweep_parameter(SweepFamily::VarianceBudget, &budgets, &ctx, &trajs, &env).unwrap();
    let lo = vbs.curve.first().unwrap().0;
    let hi = vbs.curve.last().unwrap().0;
    let interior = vbs.best > lo && vbs.best < hi;
    suite.report(
        "8",
        "sweep reproduction",
        merton.best <= 0.008 && interior,
        format!(
            "Merton best γ = {:.4} ({:.4}); VB best v = {:.4} ({:.4}) on [{lo}, {hi}], interior: {interior}",
            merton.best, merton.best_success, vbs.best, vbs.best_success
        ),
        t,
    );

    let t = Instant::now();
    let (ok, d) = determinism(data.as_deref());
    suite.report("9", "determinism", ok, d, t);

    if suite.failed.is_empty() {
        println!("acceptance: all criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED criteria {}", suite.failed.join(", "));
        ExitCode::FAILURE
    }
}
