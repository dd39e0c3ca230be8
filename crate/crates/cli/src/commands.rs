use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gbwm_core::dp_solver::{self, DpPolicy, PolicyTable};
use gbwm_core::evaluation::{self, EvalProtocol, SweepFamily};
use gbwm_core::market_data::ReturnSeries;
use gbwm_core::ppo::{self, ActorCritic, ModePolicy, PolicyCheckpoint};
use gbwm_core::strategies::{AllocationPolicy, GlidePath, MertonConstant, StrategyContext, VarianceBudget};
use gbwm_core::trajectory_gen::{estimate_moments, EpisodeSource, Generator, Moments, Trajectory, TrajectorySource};
use gbwm_core::EnvState;
use serde_json::json;

use crate::config::{parse_grid, parse_sizes, RunConfig};
use crate::output::{data_input, file_input, Input, Writer};
use crate::{Command, PolicyArgs};

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<()> {
    match command {
        Command::Ingest(a) => {
            if let Some(c) = a.date_column {
                cfg.data.date_column = c;
            }
            if let Some(c) = a.bond_column {
                cfg.data.bond_column = c;
            }
            if let Some(c) = a.stock_column {
                cfg.data.stock_column = c;
            }
            if let Some(p) = a.input {
                cfg.data.path = Some(p);
            }
            ingest(&cfg, &a.out)
        }
        Command::Simulate(a) => {
            if let Some(l) = a.length {
                cfg.env.horizon = l;
            }
            if let Some(s) = a.seed {
                cfg.evaluation.seed = s;
            }
            if let Some(c) = a.count {
                cfg.evaluation.count = c;
            }
            if let Some(w) = &a.windows {
                cfg.generator.train_windows = parse_sizes(w)?;
            }
            let blocks = parse_sizes(a.blocks.as_deref().unwrap_or("1"))?;
            let mode = a.mode.as_deref().unwrap_or("gaussian");
            simulate(&cfg, mode, &blocks, a.subset.as_deref().unwrap_or("train"), &a.out)
        }
        Command::DpSolve(a) => {
            if let Some(n) = a.nodes {
                cfg.dp.nodes = n;
            }
            if let Some(n) = a.alphas {
                cfg.dp.alphas = n;
            }
            dp_solve(&cfg, &a.out)
        }
        Command::Train(a) => {
            if let Some(e) = a.episodes {
                cfg.ppo.total_episodes = e;
            }
            if let Some(s) = a.seed {
                cfg.ppo.seed = s;
            }
            if let Some(lr) = a.learning_rate {
                cfg.ppo.learning_rate = lr;
            }
            if let Some(n) = a.eval_interval {
                cfg.ppo.eval_interval = n;
            }
            if let Some(n) = a.eval_episodes {
                cfg.ppo.eval_episodes = n;
            }
            let curve = a.curve.unwrap_or_else(|| suffixed(&a.out, ".curve.csv"));
            train(&cfg, &a.out, &curve)
        }
        Command::Evaluate(a) => {
            if let Some(c) = a.count {
                cfg.evaluation.count = c;
            }
            if let Some(s) = a.seed {
                cfg.evaluation.seed = s;
            }
            apply_policy_args(&mut cfg, &a.policy_args);
            evaluate(&cfg, &a.policy, &a.protocol, &a.out, a.glide_path.as_deref())
        }
        Command::Sweep(a) => {
            if let Some(c) = a.count {
                cfg.sweep.count = c;
            }
            if let Some(s) = a.seed {
                cfg.sweep.seed = s;
            }
            let family = match a.strategy.to_ascii_lowercase().as_str() {
                "mc" => SweepFamily::Merton,
                "vb" => SweepFamily::VarianceBudget,
                other => bail!("unknown sweep strategy {other:?} (expected mc or vb)"),
            };
            if let Some(g) = a.grid {
                match family {
                    SweepFamily::Merton => cfg.sweep.gamma_grid = g,
                    SweepFamily::VarianceBudget => cfg.sweep.budget_grid = g,
                }
            }
            sweep(&cfg, family, &a.out)
        }
        Command::Table(a) => {
            if let Some(c) = a.count {
                cfg.evaluation.count = c;
            }
            if let Some(s) = a.seed {
                cfg.evaluation.seed = s;
            }
            apply_policy_args(&mut cfg, &a.policy_args);
            table(&cfg, &a.out, a.json.as_deref())
        }
        Command::PolicyGrid(a) => {
            apply_policy_args(&mut cfg, &a.policy_args);
            policy_grid(
                &cfg,
                a.policy.as_deref().unwrap_or("rl"),
                a.time_points.unwrap_or(11),
                a.wealth_points.unwrap_or(21),
                &a.out,
            )
        }
    }
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn apply_policy_args(cfg: &mut RunConfig, a: &PolicyArgs) {
    if let Some(g) = a.gamma {
        cfg.strategies.gamma = g;
    }
    if let Some(b) = a.budget {
        cfg.strategies.budget = b;
    }
    if let Some(p) = &a.checkpoint {
        cfg.artifacts.checkpoint = Some(p.clone());
    }
    if let Some(p) = &a.dp_table {
        cfg.artifacts.dp_table = Some(p.clone());
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.data.path.as_ref().ok_or_else(|| anyhow!("ingest needs --input or data.path"))?;
    let series = cfg.series()?;
    let tmp = tempfile_in(out)?;
    series.save_canonical(&tmp)?;
    let bytes = std::fs::read(&tmp)?;
    std::fs::remove_file(&tmp)?;
    let w = Writer {
        command: "ingest",
        cfg,
        seed: 0,
        inputs: vec![data_input(cfg)?],
    };
    w.write(
        out,
        &bytes,
        json!({"rows": series.len(), "first": series.first_month().to_string(), "last": series.last_month().to_string()}),
    )?;
    eprintln!(
        "ingested {} months {}..{}",
        series.len(),
        series.first_month(),
        series.last_month()
    );
    Ok(())
}

fn tempfile_in(out: &Path) -> Result<PathBuf> {
    let tmp = suffixed(out, ".partial");
    if let Some(dir) = tmp.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(tmp)
}

fn subset(cfg: &RunConfig, which: &str) -> Result<ReturnSeries> {
    match which {
        "full" => cfg.series(),
        "train" => Ok(cfg.split()?.0),
        "test" => Ok(cfg.split()?.1),
        other => bail!("unknown subset {other:?} (expected train, test or full)"),
    }
}

fn simulate(cfg: &RunConfig, mode: &str, blocks: &[usize], which: &str, out: &Path) -> Result<()> {
    cfg.validate()?;
    let series = subset(cfg, which)?;
    let generator = match mode {
        "gaussian" => Generator::Gaussian {
            windows: cfg.generator.train_windows.clone(),
        },
        "bootstrap" => Generator::Bootstrap { blocks: blocks.to_vec() },
        "historical" => Generator::Historical,
        other => bail!("unknown mode {other:?} (expected gaussian, bootstrap or historical)"),
    };
    let length = cfg.env.horizon;
    let source = TrajectorySource::new(&series, generator.clone(), length, cfg.evaluation.seed)?;
    let count = source.finite_len().unwrap_or(cfg.evaluation.count);
    let trajs = collect(&source, count)?;
    let mut text = String::from("trajectory_id,step,bond_return,stock_return\n");
    for (id, t) in trajs.iter().enumerate() {
        for (s, r) in t.returns.iter().enumerate() {
            writeln!(text, "{id},{s},{},{}", fmt_f(r[0]), fmt_f(r[1]))?;
        }
    }
    let w = Writer {
        command: "simulate",
        cfg,
        seed: cfg.evaluation.seed,
        inputs: vec![data_input(cfg)?],
    };
    w.write(
        out,
        text.as_bytes(),
        json!({"generator": generator, "subset": which, "count": count, "length": length}),
    )
}

fn collect(source: &dyn EpisodeSource, count: usize) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| source.episode(i))
        .collect::<Result<Vec<_>, _>>()?)
}

fn train_moments(train: &ReturnSeries) -> Result<Moments> {
    Ok(estimate_moments(train.bond(), train.stock())?)
}

fn solve_dp(cfg: &RunConfig, m: &Moments) -> Result<PolicyTable> {
    Ok(dp_solver::solve_from_moments(&cfg.env, m, cfg.dp.nodes, cfg.dp.alphas)?)
}

fn dp_solve(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (train, _) = cfg.split()?;
    let m = train_moments(&train)?;
    let table = solve_dp(cfg, &m)?;
    let root = table.root_value(cfg.env.initial_wealth_ratio);
    let w = Writer {
        command: "dp-solve",
        cfg,
        seed: 0,
        inputs: vec![data_input(cfg)?],
    };
    w.write(out, serde_json::to_string(&table)?.as_bytes(), json!({"root_value": root, "moments": m}))?;
    eprintln!("root success probability {root:.4}");
    Ok(())
}

fn load_table(path: &Path) -> Result<PolicyTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing DP table {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ActorCritic> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck: PolicyCheckpoint = serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    Ok(ActorCritic::from_checkpoint(&ck)?)
}

fn training_source<'a>(cfg: &RunConfig, train: &'a ReturnSeries, seed: u64) -> Result<TrajectorySource<'a>> {
    Ok(TrajectorySource::new(
        train,
        Generator::Gaussian {
            windows: cfg.generator.train_windows.clone(),
        },
        cfg.env.horizon,
        seed,
    )?)
}

fn train(cfg: &RunConfig, out: &Path, curve_path: &Path) -> Result<()> {
    cfg.validate()?;
    let (train, _) = cfg.split()?;
    let source = training_source(cfg, &train, cfg.ppo.seed)?;
    let holdout = training_source(cfg, &train, cfg.generator.holdout_seed)?;
    let outcome = ppo::train_from(ActorCritic::new(cfg.ppo.seed), &cfg.ppo, &cfg.env, &source, &holdout, |p| {
        eprintln!(
            "episode {} holdout success {:.4} value(0) {:.4}",
            p.episode, p.eval_success_rate, p.value_at_start
        )
    })?;
    let mut curve = String::from(
        "episode,eval_success_rate,value_at_start,train_success_rate,policy_loss,value_loss,entropy,clip_fraction,approx_kl\n",
    );
    for p in &outcome.curve {
        writeln!(
            curve,
            "{},{},{},{},{},{},{},{},{}",
            p.episode,
            fmt_f(p.eval_success_rate),
            fmt_f(p.value_at_start),
            fmt_f(p.train_success_rate),
            fmt_f(p.policy_loss),
            fmt_f(p.value_loss),
            fmt_f(p.entropy),
            fmt_f(p.clip_fraction),
            fmt_f(p.approx_kl)
        )?;
    }
    let w = Writer {
        command: "train",
        cfg,
        seed: cfg.ppo.seed,
        inputs: vec![data_input(cfg)?],
    };
    let ck = serde_json::to_string_pretty(&outcome.best.to_checkpoint())? + "\n";
    w.write(out, ck.as_bytes(), json!({"best_eval_success": outcome.best_eval_success}))?;
    w.write(curve_path, curve.as_bytes(), json!({"checkpoint": out}))?;
    eprintln!("best holdout success {:.4}", outcome.best_eval_success);
    Ok(())
}

/// Parses `historical`, `simulated:36` or `bootstrap:1,2,3`.
pub fn parse_protocol(spec: &str, count: usize, seed: u64) -> Result<EvalProtocol> {
    let (kind, params) = match spec.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (spec, None),
    };
    let sizes = |p: Option<&str>| -> Result<Vec<usize>> {
        let p = p.ok_or_else(|| anyhow!("protocol {spec:?} needs sizes, e.g. {kind}:1,2,3"))?;
        let v = parse_sizes(p)?;
        if v.contains(&0) {
            bail!("protocol {spec:?} has a zero size");
        }
        Ok(v)
    };
    if count == 0 {
        bail!("count must be >= 1");
    }
    Ok(match kind {
        "historical" => EvalProtocol::historical(),
        "simulated" => EvalProtocol::simulated(&sizes(params)?, count, seed),
        "bootstrap" => EvalProtocol::bootstrap(&sizes(params)?, count, seed),
        other => bail!("unknown protocol {other:?} (expected historical, simulated or bootstrap)"),
    })
}

struct Policies {
    ctx: StrategyContext,
    moments: Moments,
}

impl Policies {
    fn new(train: &ReturnSeries) -> Result<Self> {
        let moments = train_moments(train)?;
        Ok(Self {
            ctx: StrategyContext::from_moments(&moments),
            moments,
        })
    }

    fn build(&self, name: &str, cfg: &RunConfig, inputs: &mut Vec<Input>) -> Result<Box<dyn AllocationPolicy>> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "dg" => Box::new(GlidePath),
            "mc" => Box::new(MertonConstant::new(&self.ctx, cfg.strategies.gamma)?),
            "vb" => Box::new(VarianceBudget::new(&self.ctx, cfg.strategies.budget)),
            "dp" => Box::new(DpPolicy::new(match &cfg.artifacts.dp_table {
                Some(p) => {
                    inputs.push(file_input("dp_table", p)?);
                    load_table(p)?
                }
                None => solve_dp(cfg, &self.moments)?,
            })),
            "rl" => {
                let p = cfg
                    .artifacts
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| anyhow!("rl needs --checkpoint or artifacts.checkpoint"))?;
                inputs.push(file_input("checkpoint", p)?);
                Box::new(ModePolicy(load_checkpoint(p)?))
            }
            other => bail!("unknown policy {other:?} (expected dg, mc, vb, dp or rl)"),
        })
    }
}

fn evaluate(cfg: &RunConfig, policy: &str, protocol: &str, out: &Path, glide: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let (train, test) = cfg.split()?;
    let proto = parse_protocol(protocol, cfg.evaluation.count, cfg.evaluation.seed)?;
    let mut inputs = vec![data_input(cfg)?];
    let pol = Policies::new(&train)?.build(policy, cfg, &mut inputs)?;
    let row = evaluation::run_protocol(pol.as_ref(), &proto, &test, &cfg.env)?;
    let text = format!(
        "strategy,protocol,success_rate,count,seed\n{},{},{:.6},{},{}\n",
        row.strategy, row.protocol, row.success_rate, row.count, row.seed
    );
    let w = Writer {
        command: "evaluate",
        cfg,
        seed: cfg.evaluation.seed,
        inputs,
    };
    let extra = json!({
        "protocol": proto,
        "overlapping_windows": matches!(proto.kind, gbwm_core::ProtocolKind::Historical),
    });
    w.write(out, text.as_bytes(), &extra)?;
    if let Some(g) = glide {
        let mut t = String::from("step,mean_alpha\n");
        for (i, a) in row.glide_path.iter().enumerate() {
            writeln!(t, "{i},{}", fmt_f(*a))?;
        }
        w.write(g, t.as_bytes(), &extra)?;
    }
    println!("{} {} {:.4}", row.strategy, row.protocol, row.success_rate);
    Ok(())
}

fn sweep_trajectories(cfg: &RunConfig, train: &ReturnSeries) -> Result<Vec<Trajectory>> {
    let source = training_source(cfg, train, cfg.sweep.seed)?;
    collect(&source, cfg.sweep.count)
}

fn run_sweep(cfg: &RunConfig, family: SweepFamily, train: &ReturnSeries, ctx: &StrategyContext) -> Result<evaluation::SweepResult> {
    let grid = match family {
        SweepFamily::Merton => parse_grid(&cfg.sweep.gamma_grid)?,
        SweepFamily::VarianceBudget => parse_grid(&cfg.sweep.budget_grid)?,
    };
    let trajs = sweep_trajectories(cfg, train)?;
    Ok(evaluation::sweep_parameter(family, &grid, ctx, &trajs, &cfg.env)?)
}

fn sweep(cfg: &RunConfig, family: SweepFamily, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (train, _) = cfg.split()?;
    let pols = Policies::new(&train)?;
    let r = run_sweep(cfg, family, &train, &pols.ctx)?;
    let mut text = String::from("parameter,success_rate\n");
    for (p, s) in &r.curve {
        writeln!(text, "{},{:.6}", fmt_f(*p), s)?;
    }
    let w = Writer {
        command: "sweep",
        cfg,
        seed: cfg.sweep.seed,
        inputs: vec![data_input(cfg)?],
    };
    w.write(out, text.as_bytes(), json!({"family": family, "best": r.best, "best_success": r.best_success}))?;
    println!("best {} success {:.4}", r.best, r.best_success);
    Ok(())
}

fn table(cfg: &RunConfig, out: &Path, json_out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let (train, test) = cfg.split()?;
    let pols = Policies::new(&train)?;
    if cfg.strategies.tune {
        cfg.strategies.gamma = run_sweep(&cfg, SweepFamily::Merton, &train, &pols.ctx)?.best;
        cfg.strategies.budget = run_sweep(&cfg, SweepFamily::VarianceBudget, &train, &pols.ctx)?.best;
    }
    let mut inputs = vec![data_input(&cfg)?];
    let mut built: Vec<(String, Option<Box<dyn AllocationPolicy>>)> = Vec::new();
    let mut absent = Vec::new();
    for name in ["DG", "MC", "VB", "DP", "RL"] {
        match pols.build(name, &cfg, &mut inputs) {
            Ok(p) => built.push((name.into(), Some(p))),
            Err(e) => {
                eprintln!("warning: {name} absent: {e:#}");
                absent.push(json!({"strategy": name, "reason": format!("{e:#}")}));
                built.push((name.into(), None));
            }
        }
    }
    let refs: Vec<(String, Option<&dyn AllocationPolicy>)> =
        built.iter().map(|(n, p)| (n.clone(), p.as_deref())).collect();
    let protocols = evaluation::table_protocols(cfg.evaluation.count, cfg.evaluation.seed);
    let t = evaluation::build_table(&refs, &protocols, &test, &cfg.env)?;
    let extra = json!({
        "counts": t.counts,
        "protocols": t.columns,
        "absent": absent,
        "gamma": cfg.strategies.gamma,
        "budget": cfg.strategies.budget,
        "historical_windows_overlap": true,
    });
    let w = Writer {
        command: "table",
        cfg: &cfg,
        seed: cfg.evaluation.seed,
        inputs,
    };
    w.write(out, t.to_csv().as_bytes(), &extra)?;
    if let Some(j) = json_out {
        w.write(j, (serde_json::to_string_pretty(&t)? + "\n").as_bytes(), &extra)?;
    }
    print!("{}", t.to_csv());
    Ok(())
}

fn policy_grid(cfg: &RunConfig, policy: &str, nt: usize, nw: usize, out: &Path) -> Result<()> {
    cfg.validate()?;
    if nt == 0 || nw == 0 {
        bail!("grid needs at least one point per axis");
    }
    let mut inputs = vec![data_input(cfg)?];
    let cells: Vec<(f64, f64, f64)> = match policy {
        "rl" => {
            let p = cfg
                .artifacts
                .checkpoint
                .as_ref()
                .ok_or_else(|| anyhow!("rl needs --checkpoint or artifacts.checkpoint"))?;
            inputs.push(file_input("checkpoint", p)?);
            ppo::export_policy_grid(&load_checkpoint(p)?, nt, nw)
                .into_iter()
                .map(|c| (c.time_fraction, c.wealth_ratio, c.alpha))
                .collect()
        }
        "dp" => {
            let (train, _) = cfg.split()?;
            let dp = Policies::new(&train)?.build("dp", cfg, &mut inputs)?;
            let h = cfg.env.horizon;
            let lin = |i: usize, n: usize, hi: f64| if n <= 1 { 0.0 } else { hi * i as f64 / (n - 1) as f64 };
            let mut v = Vec::with_capacity(nt * nw);
            for i in 0..nt {
                for j in 0..nw {
                    let (tf, wr) = (lin(i, nt, 1.0), lin(j, nw, 2.0));
                    let s = EnvState {
                        step: ((tf * h as f64).round() as usize).min(h - 1),
                        wealth: wr * cfg.env.goal_wealth,
                        horizon: h,
                        goal_wealth: cfg.env.goal_wealth,
                    };
                    v.push((tf, wr, dp.act(&s, &[])));
                }
            }
            v
        }
        other => bail!("unknown policy {other:?} (expected rl or dp)"),
    };
    let mut text = String::from("time_fraction,wealth_ratio,alpha\n");
    for (t, w, a) in cells {
        writeln!(text, "{},{},{}", fmt_f(t), fmt_f(w), fmt_f(a))?;
    }
    let w = Writer {
        command: "policy-grid",
        cfg,
        seed: 0,
        inputs,
    };
    w.write(out, text.as_bytes(), json!({"policy": policy, "time_points": nt, "wealth_points": nw}))
}
