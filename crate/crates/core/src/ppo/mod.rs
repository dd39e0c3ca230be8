//! Proximal Policy Optimization for the allocation problem.
//!
//! The policy is a Beta distribution over the stock weight whose shapes come
//! from a 2-6-6-2 actor network; a separate 2-6-6-1 critic estimates the
//! state value. Evaluation uses the Beta mode, so the trained policy is
//! deterministic.

pub mod beta;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbwm_env::{self, EnvConfig, EnvError, EnvState};
use crate::neural::{Adam, Checkpoint, ForwardCache, Mlp, NeuralError};
use crate::rng::{mix, substream};
use crate::strategies::AllocationPolicy;
use crate::trajectory_gen::{EpisodeSource, GenError};
use beta::BetaParams;

pub const HIDDEN: [usize; 2] = [6, 6];

const ACTION_STREAM: u64 = 0xA11C_A7E5;
const SHUFFLE_STREAM: u64 = 0x5B0F_F1E5;
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("non-finite loss after {updates} updates ({diag})")]
    NonFinite {
        updates: usize,
        diag: String,
        /// Last policy with finite parameters.
        last_good: Box<ActorCritic>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    pub episodes_per_batch: usize,
    pub total_episodes: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub minibatch_size: usize,
    /// Epoch loop stops once a minibatch's approximate KL exceeds this.
    pub target_kl: f64,
    /// Joint gradient-norm clip for actor and critic; 0 disables.
    pub max_grad_norm: f64,
    /// Episodes between held-out evaluations.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            gamma: 1.0,
            clip_epsilon: 0.2,
            gae_lambda: 0.8,
            epochs_per_update: 10,
            episodes_per_batch: 32,
            total_episodes: 200_000,
            entropy_coef: 0.0,
            value_coef: 0.5,
            minibatch_size: 64,
            target_kl: 0.05,
            max_grad_norm: 0.5,
            eval_interval: 5_000,
            eval_episodes: 2_000,
            seed: 7,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.episodes_per_batch == 0 || self.minibatch_size == 0 || self.epochs_per_update == 0 {
            return bad("batch sizes and epochs must be >= 1");
        }
        if self.eval_episodes == 0 || self.eval_interval == 0 {
            return bad("evaluation sizes must be >= 1");
        }
        Ok(())
    }
}

/// Separate actor (Beta shapes) and critic (state value) networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

/// JSON checkpoint of an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub actor: Checkpoint,
    pub critic: Checkpoint,
}

impl ActorCritic {
    /// Glorot init; the actor's output layer is scaled by 0.01 so a fresh
    /// policy starts close to the symmetric Beta(1.69, 1.69).
    pub fn new(seed: u64) -> Self {
        let mut rng = substream(seed, 0);
        let mut actor = Mlp::new(&[2, HIDDEN[0], HIDDEN[1], 2], &mut rng).expect("valid topology");
        actor.scale_output_layer(0.01);
        let critic = Mlp::new(&[2, HIDDEN[0], HIDDEN[1], 1], &mut rng).expect("valid topology");
        Self { actor, critic }
    }

    pub fn beta(&self, obs: [f64; 2]) -> BetaParams {
        let c = self.actor.forward(&obs).expect("actor takes 2 inputs");
        BetaParams::from_logits([c.output()[0], c.output()[1]])
    }

    pub fn value(&self, obs: [f64; 2]) -> f64 {
        self.critic.forward(&obs).expect("critic takes 2 inputs").output()[0]
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            actor: self.actor.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self, NeuralError> {
        let actor = Mlp::from_checkpoint(&ck.actor)?;
        let critic = Mlp::from_checkpoint(&ck.critic)?;
        if actor.topology() != [2, HIDDEN[0], HIDDEN[1], 2] || critic.topology() != [2, HIDDEN[0], HIDDEN[1], 1] {
            return Err(NeuralError::Topology);
        }
        Ok(Self { actor, critic })
    }

    fn is_finite(&self) -> bool {
        self.actor.params().iter().chain(self.critic.params()).all(|p| p.is_finite())
    }
}

/// Stochastic action and its log-density.
pub fn sample_action<R: rand::Rng + ?Sized>(policy: &ActorCritic, obs: [f64; 2], rng: &mut R) -> (f64, f64) {
    let p = policy.beta(obs);
    let a = p.sample(rng);
    (a, p.log_prob(a))
}

/// Deterministic action: the mode of the Beta distribution.
pub fn mode_action(policy: &ActorCritic, obs: [f64; 2]) -> f64 {
    policy.beta(obs).mode()
}

/// The mode policy as an [`AllocationPolicy`].
#[derive(Debug, Clone)]
pub struct ModePolicy(pub ActorCritic);

impl AllocationPolicy for ModePolicy {
    fn name(&self) -> String {
        "RL".into()
    }

    fn act(&self, state: &EnvState, _realized: &[[f64; 2]]) -> f64 {
        mode_action(&self.0, state.observation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub obs: [f64; 2],
    pub action: f64,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub episode: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn episodes(&self) -> usize {
        self.steps.iter().filter(|s| s.done).count()
    }

    pub fn success_rate(&self) -> f64 {
        let n = self.episodes();
        if n == 0 {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.done && s.reward > 0.0).count() as f64 / n as f64
    }
}

fn run_episode(
    env: &EnvConfig,
    source: &dyn EpisodeSource,
    policy: &ActorCritic,
    episode: u64,
    seed: u64,
) -> Result<Vec<StepRecord>, PpoError> {
    let traj = source.episode(episode)?;
    let mut rng = substream(mix(seed, ACTION_STREAM), episode);
    let mut state = gbwm_env::reset(env, &traj)?;
    let mut out = Vec::with_capacity(env.horizon);
    loop {
        let obs = state.observation();
        let (action, log_prob) = sample_action(policy, obs, &mut rng);
        let value = policy.value(obs);
        let tr = gbwm_env::step(&state, action, &traj)?;
        out.push(StepRecord {
            obs,
            action,
            log_prob,
            value,
            reward: tr.reward,
            done: tr.done,
            episode,
        });
        state = tr.state;
        if tr.done {
            return Ok(out);
        }
    }
}

/// Plays `episodes` complete episodes with stochastic actions.
///
/// Episode `e` uses trajectory `source.episode(e)` and the action stream
/// `(seed, e)`; the buffer is ordered by episode regardless of threading.
pub fn collect_rollouts(
    env: &EnvConfig,
    source: &dyn EpisodeSource,
    policy: &ActorCritic,
    episodes: std::ops::Range<u64>,
    seed: u64,
) -> Result<RolloutBuffer, PpoError> {
    let per: Vec<Vec<StepRecord>> = episodes
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|e| run_episode(env, source, policy, e, seed))
        .collect::<Result<_, _>>()?;
    Ok(RolloutBuffer {
        steps: per.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// GAE before normalisation.
    pub raw: Vec<f64>,
    /// Zero mean, unit variance over the batch.
    pub normalized: Vec<f64>,
    /// Value targets `raw + value`.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation over complete episodes.
pub fn compute_advantages(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Advantages {
    let steps = &buffer.steps;
    let n = steps.len();
    let mut raw = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for i in (0..n).rev() {
        let s = &steps[i];
        if s.done {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = s.reward + gamma * next_value - s.value;
        next_adv = delta + gamma * lambda * next_adv;
        raw[i] = next_adv;
        next_value = s.value;
    }
    let returns = raw.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let sd = var.sqrt() + 1e-8;
    let normalized = raw.iter().map(|a| (a - mean) / sd).collect();
    Advantages {
        raw,
        normalized,
        returns,
    }
}

/// One training sample for the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub obs: [f64; 2],
    pub action: f64,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

pub fn samples(buffer: &RolloutBuffer, adv: &Advantages) -> Vec<Sample> {
    buffer
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| Sample {
            obs: s.obs,
            action: s.action,
            old_log_prob: s.log_prob,
            advantage: adv.normalized[i],
            value_target: adv.returns[i],
        })
        .collect()
}

/// Minibatch loss terms (means over samples).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossTerms {
    /// `-E[min(r A, clip(r) A)]`
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `policy_loss + value_coef·value_loss − entropy_coef·entropy`
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Default)]
struct Partial {
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: usize,
    kl: f64,
    g_actor: Vec<f64>,
    g_critic: Vec<f64>,
}

/// Sums loss terms over `batch`; gradients are of the mean over `n_total`.
fn accumulate(policy: &ActorCritic, batch: &[Sample], cfg: &PpoConfig, want_grad: bool, n_total: usize) -> Partial {
    let mut p = Partial::default();
    if want_grad {
        p.g_actor = vec![0.0; policy.actor.params().len()];
        p.g_critic = vec![0.0; policy.critic.params().len()];
    }
    let n = n_total.max(1) as f64;
    let (mut ca, mut cc) = (ForwardCache::default(), ForwardCache::default());
    for s in batch {
        policy.actor.forward_into(&s.obs, &mut ca).expect("shape");
        let z = [ca.output()[0], ca.output()[1]];
        let bp = BetaParams::from_logits(z);
        let logp = bp.log_prob(s.action);
        let ratio = (logp - s.old_log_prob).exp();
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        let unclipped = ratio * s.advantage;
        let clipped = clipped_ratio * s.advantage;
        let surrogate = unclipped.min(clipped);
        let entropy = bp.entropy();
        p.policy -= surrogate;
        p.entropy += entropy;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            p.clipped += 1;
        }
        p.kl += (ratio - 1.0) - (logp - s.old_log_prob);

        policy.critic.forward_into(&s.obs, &mut cc).expect("shape");
        let v = cc.output()[0];
        let err = v - s.value_target;
        p.value += err * err;

        if want_grad {
            // d(total)/d(logp): only the unclipped branch carries gradient.
            let d_logp = if unclipped <= clipped { -unclipped / n } else { 0.0 };
            let gl = bp.grad_log_prob(s.action);
            let ge = bp.grad_entropy();
            let jac = BetaParams::logit_jacobian(z);
            let dz = [
                (d_logp * gl[0] - cfg.entropy_coef / n * ge[0]) * jac[0],
                (d_logp * gl[1] - cfg.entropy_coef / n * ge[1]) * jac[1],
            ];
            policy.actor.backward(&mut ca, &dz, &mut p.g_actor).expect("shape");
            let dv = 2.0 * cfg.value_coef * err / n;
            policy.critic.backward(&mut cc, &[dv], &mut p.g_critic).expect("shape");
        }
    }
    p
}

fn merge(parts: Vec<Partial>, n: usize, cfg: &PpoConfig) -> (LossTerms, Vec<f64>, Vec<f64>) {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        acc.policy += p.policy;
        acc.value += p.value;
        acc.entropy += p.entropy;
        acc.clipped += p.clipped;
        acc.kl += p.kl;
        for (a, b) in acc.g_actor.iter_mut().zip(&p.g_actor) {
            *a += b;
        }
        for (a, b) in acc.g_critic.iter_mut().zip(&p.g_critic) {
            *a += b;
        }
    }
    let nf = n.max(1) as f64;
    let policy_loss = acc.policy / nf;
    let value_loss = acc.value / nf;
    let entropy = acc.entropy / nf;
    let terms = LossTerms {
        policy_loss,
        value_loss,
        entropy,
        total: policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
        clip_fraction: acc.clipped as f64 / nf,
        approx_kl: acc.kl / nf,
    };
    (terms, acc.g_actor, acc.g_critic)
}

/// Loss terms of the clipped surrogate on a minibatch.
pub fn ppo_loss(policy: &ActorCritic, batch: &[Sample], cfg: &PpoConfig) -> LossTerms {
    merge(vec![accumulate(policy, batch, cfg, false, batch.len())], batch.len(), cfg).0
}

/// Loss terms plus gradients of `total` w.r.t. actor and critic parameters.
///
/// The batch is split into fixed-size chunks reduced in order, so the
/// result does not depend on the number of threads.
pub fn ppo_loss_grad(policy: &ActorCritic, batch: &[Sample], cfg: &PpoConfig) -> (LossTerms, Vec<f64>, Vec<f64>) {
    if batch.is_empty() {
        let terms = merge(Vec::new(), 0, cfg).0;
        return (
            terms,
            vec![0.0; policy.actor.params().len()],
            vec![0.0; policy.critic.params().len()],
        );
    }
    let parts: Vec<Partial> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|c| accumulate(policy, c, cfg, true, batch.len()))
        .collect();
    merge(parts, batch.len(), cfg)
}

/// Diagnostics from one [`ppo_update`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Clip fraction of the very first minibatch (always 0).
    pub first_clip_fraction: f64,
    pub minibatches: usize,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub policy: ActorCritic,
    actor_opt: Adam,
    critic_opt: Adam,
    pub updates: usize,
}

impl Trainer {
    pub fn new(policy: ActorCritic) -> Self {
        let actor_opt = Adam::new(policy.actor.params().len());
        let critic_opt = Adam::new(policy.critic.params().len());
        Self {
            policy,
            actor_opt,
            critic_opt,
            updates: 0,
        }
    }
}

fn clip_grad_norm(ga: &mut [f64], gc: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = ga.iter().chain(gc.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        ga.iter_mut().chain(gc.iter_mut()).for_each(|g| *g *= s);
    }
}

/// Several epochs of minibatch Adam on the clipped surrogate.
pub fn ppo_update(trainer: &mut Trainer, data: &[Sample], cfg: &PpoConfig) -> Result<UpdateStats, PpoError> {
    let mut rng = substream(mix(cfg.seed, SHUFFLE_STREAM), trainer.updates as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = UpdateStats::default();
    let mut sum = LossTerms::default();
    let mut batch = Vec::with_capacity(cfg.minibatch_size);
    'epochs: for epoch in 0..cfg.epochs_per_update {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let (terms, mut ga, mut gc) = ppo_loss_grad(&trainer.policy, &batch, cfg);
            let finite = terms.total.is_finite() && ga.iter().chain(&gc).all(|g| g.is_finite());
            if !finite {
                return Err(PpoError::NonFinite {
                    updates: trainer.updates,
                    diag: format!("{terms:?}"),
                    last_good: Box::new(trainer.policy.clone()),
                });
            }
            if stats.minibatches == 0 {
                stats.first_clip_fraction = terms.clip_fraction;
            }
            if terms.approx_kl > cfg.target_kl {
                stats.early_stopped = true;
                break 'epochs;
            }
            clip_grad_norm(&mut ga, &mut gc, cfg.max_grad_norm);
            trainer
                .actor_opt
                .step(trainer.policy.actor.params_mut(), &ga, cfg.learning_rate)?;
            trainer
                .critic_opt
                .step(trainer.policy.critic.params_mut(), &gc, cfg.learning_rate)?;
            stats.minibatches += 1;
            sum.policy_loss += terms.policy_loss;
            sum.value_loss += terms.value_loss;
            sum.entropy += terms.entropy;
            sum.clip_fraction += terms.clip_fraction;
            sum.approx_kl = terms.approx_kl;
        }
        stats.epochs_run = epoch + 1;
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss = sum.policy_loss / m;
    stats.value_loss = sum.value_loss / m;
    stats.entropy = sum.entropy / m;
    stats.clip_fraction = sum.clip_fraction / m;
    stats.approx_kl = sum.approx_kl;
    trainer.updates += 1;
    if !trainer.policy.is_finite() {
        return Err(PpoError::NonFinite {
            updates: trainer.updates,
            diag: "parameters became non-finite".into(),
            last_good: Box::new(trainer.policy.clone()),
        });
    }
    Ok(stats)
}

/// Deterministic (mode) success rate and mean critic value at `t = 0`.
pub fn evaluate_mode(
    policy: &ActorCritic,
    env: &EnvConfig,
    source: &dyn EpisodeSource,
    episodes: usize,
) -> Result<(f64, f64), PpoError> {
    let hits: Vec<f64> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| {
            let traj = source.episode(e)?;
            let (_, r) = gbwm_env::rollout(env, &traj, |s, _| mode_action(policy, s.observation()))?;
            Ok(r)
        })
        .collect::<Result<_, PpoError>>()?;
    let rate = hits.iter().sum::<f64>() / episodes.max(1) as f64;
    let v0 = policy.value([0.0, env.initial_wealth_ratio]);
    Ok((rate, v0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub eval_success_rate: f64,
    pub value_at_start: f64,
    pub train_success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best held-out success rate.
    pub best: ActorCritic,
    pub best_eval_success: f64,
    pub last: ActorCritic,
    pub curve: Vec<CurvePoint>,
}

/// Collect/update loop with periodic held-out evaluation.
pub fn train(
    cfg: &PpoConfig,
    env: &EnvConfig,
    source: &dyn EpisodeSource,
    eval_source: &dyn EpisodeSource,
) -> Result<TrainOutcome, PpoError> {
    train_from(ActorCritic::new(cfg.seed), cfg, env, source, eval_source, |_| {})
}

/// [`train`] from a given initial policy, reporting each curve point.
pub fn train_from(
    init: ActorCritic,
    cfg: &PpoConfig,
    env: &EnvConfig,
    source: &dyn EpisodeSource,
    eval_source: &dyn EpisodeSource,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome, PpoError> {
    cfg.validate()?;
    env.validate()?;
    let mut trainer = Trainer::new(init);
    let (rate0, v0) = evaluate_mode(&trainer.policy, env, eval_source, cfg.eval_episodes)?;
    let mut best = (rate0, trainer.policy.clone());
    let first = CurvePoint {
        episode: 0,
        eval_success_rate: rate0,
        value_at_start: v0,
        train_success_rate: f64::NAN,
        policy_loss: f64::NAN,
        value_loss: f64::NAN,
        entropy: f64::NAN,
        clip_fraction: f64::NAN,
        approx_kl: f64::NAN,
    };
    on_point(&first);
    let mut curve = vec![first];
    let mut done = 0usize;
    let mut next_eval = cfg.eval_interval;
    let mut window: Vec<(f64, UpdateStats)> = Vec::new();
    while done < cfg.total_episodes {
        let n = cfg.episodes_per_batch.min(cfg.total_episodes - done);
        let buf = collect_rollouts(env, source, &trainer.policy, done as u64..(done + n) as u64, cfg.seed)?;
        let adv = compute_advantages(&buf, cfg.gamma, cfg.gae_lambda);
        let data = samples(&buf, &adv);
        let stats = ppo_update(&mut trainer, &data, cfg)?;
        window.push((buf.success_rate(), stats));
        done += n;
        if done >= next_eval || done == cfg.total_episodes {
            next_eval += cfg.eval_interval;
            let (rate, v0) = evaluate_mode(&trainer.policy, env, eval_source, cfg.eval_episodes)?;
            let k = window.len().max(1) as f64;
            let avg = |f: fn(&UpdateStats) -> f64| window.iter().map(|(_, s)| f(s)).sum::<f64>() / k;
            let point = CurvePoint {
                episode: done,
                eval_success_rate: rate,
                value_at_start: v0,
                train_success_rate: window.iter().map(|(r, _)| r).sum::<f64>() / k,
                policy_loss: avg(|s| s.policy_loss),
                value_loss: avg(|s| s.value_loss),
                entropy: avg(|s| s.entropy),
                clip_fraction: avg(|s| s.clip_fraction),
                approx_kl: avg(|s| s.approx_kl),
            };
            window.clear();
            on_point(&point);
            curve.push(point);
            if rate > best.0 {
                best = (rate, trainer.policy.clone());
            }
        }
    }
    Ok(TrainOutcome {
        best: best.1,
        best_eval_success: best.0,
        last: trainer.policy,
        curve,
    })
}

/// One cell of the exported policy map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub time_fraction: f64,
    pub wealth_ratio: f64,
    pub alpha: f64,
}

/// Mode actions over `t/T ∈ [0, 1]` × `W/W_G ∈ [0, 2]`, time-major.
pub fn export_policy_grid(policy: &ActorCritic, time_points: usize, wealth_points: usize) -> Vec<GridCell> {
    let lin = |i: usize, n: usize, hi: f64| if n <= 1 { 0.0 } else { hi * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(time_points * wealth_points);
    for i in 0..time_points {
        for j in 0..wealth_points {
            let t = lin(i, time_points, 1.0);
            let w = lin(j, wealth_points, 2.0);
            out.push(GridCell {
                time_fraction: t,
                wealth_ratio: w,
                alpha: mode_action(policy, [t, w]),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(value: f64, reward: f64, done: bool) -> StepRecord {
        StepRecord {
            obs: [0.0, 0.0],
            action: 0.5,
            log_prob: 0.0,
            value,
            reward,
            done,
            episode: 0,
        }
    }

    #[test]
    fn telescoping_advantage() {
        let mut steps: Vec<_> = (0..120).map(|_| record(0.0, 0.0, false)).collect();
        steps[119] = record(0.0, 1.0, true);
        let adv = compute_advantages(&RolloutBuffer { steps }, 1.0, 1.0);
        assert!(adv.raw.iter().all(|&a| a == 1.0));
        assert!(adv.normalized.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn zero_reward_zero_advantage() {
        let mut steps: Vec<_> = (0..10).map(|_| record(0.0, 0.0, false)).collect();
        steps[9].done = true;
        let adv = compute_advantages(&RolloutBuffer { steps }, 1.0, 0.95);
        assert!(adv.raw.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gamma_lambda_one_gives_reward_minus_value() {
        let vals = [0.3, -0.2, 0.9, 0.1];
        let mut steps: Vec<_> = vals.iter().map(|&v| record(v, 0.0, false)).collect();
        steps[3].reward = 1.0;
        steps[3].done = true;
        let adv = compute_advantages(&RolloutBuffer { steps }, 1.0, 1.0);
        for (a, v) in adv.raw.iter().zip(vals) {
            approx::assert_abs_diff_eq!(*a, 1.0 - v, epsilon = 1e-12);
        }
    }

    #[test]
    fn mode_symmetry_and_determinism() {
        let p = ActorCritic::new(3);
        let a = mode_action(&p, [0.2, 0.7]);
        assert_eq!(a, mode_action(&p, [0.2, 0.7]));
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn fresh_policy_grid_is_near_constant() {
        let p = ActorCritic::new(5);
        let g = export_policy_grid(&p, 11, 21);
        assert_eq!(g.len(), 231);
        assert_eq!(g[0].time_fraction, 0.0);
        assert_eq!(g.last().unwrap().wealth_ratio, 2.0);
        let (lo, hi) = g.iter().fold((1.0f64, 0.0f64), |(l, h), c| (l.min(c.alpha), h.max(c.alpha)));
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!(hi - lo < 0.05, "spread {}", hi - lo);
    }

    #[test]
    fn clip_branch_selection() {
        // A > 0 with ratio 1 + 2ε: the clipped term (1 + ε)A wins the min.
        let cfg = PpoConfig::default();
        let p = ActorCritic::new(1);
        let obs = [0.5, 0.5];
        let bp = p.beta(obs);
        let action = 0.4;
        let ratio: f64 = 1.0 + 2.0 * cfg.clip_epsilon;
        let s = Sample {
            obs,
            action,
            old_log_prob: bp.log_prob(action) - ratio.ln(),
            advantage: 2.0,
            value_target: 0.0,
        };
        let terms = ppo_loss(&p, &[s], &cfg);
        approx::assert_abs_diff_eq!(terms.policy_loss, -(1.0 + cfg.clip_epsilon) * 2.0, epsilon = 1e-12);
        assert_eq!(terms.clip_fraction, 1.0);
        let (_, ga, _) = ppo_loss_grad(&p, &[s], &cfg);
        assert!(ga.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for bad in [
            PpoConfig { clip_epsilon: 0.0, ..Default::default() },
            PpoConfig { gamma: 1.5, ..Default::default() },
            PpoConfig { gae_lambda: -0.1, ..Default::default() },
            PpoConfig { minibatch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ActorCritic::new(9);
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(ActorCritic::from_checkpoint(&back).unwrap(), p);
    }
}
