//! Central finite-difference checks of the analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::neural::{param_count, Mlp};
use crate::ppo::{ppo_loss, ppo_loss_grad, ActorCritic, PpoConfig, Sample};
use crate::rng::substream;

/// Finite-difference step.
pub const STEP: f64 = 1e-6;

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

pub fn central_difference(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + STEP;
            let up = f(&p);
            p[i] = orig - STEP;
            let dn = f(&p);
            p[i] = orig;
            (up - dn) / (2.0 * STEP)
        })
        .collect()
}

fn random_obs(rng: &mut impl Rng) -> [f64; 2] {
    [rng.random::<f64>(), 0.2 + 1.8 * rng.random::<f64>()]
}

/// All weights and biases drawn from N(0, 0.7²), so pre-activations sit
/// away from the ReLU kink with probability one.
pub fn random_mlp(topology: &[usize], rng: &mut impl Rng) -> Mlp {
    let p = (0..param_count(topology))
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            0.7 * z
        })
        .collect();
    Mlp::from_params(topology, p).expect("valid topology")
}

pub fn random_policy(seed: u64) -> ActorCritic {
    let mut rng = substream(seed, 99);
    ActorCritic {
        actor: random_mlp(&[2, 6, 6, 2], &mut rng),
        critic: random_mlp(&[2, 6, 6, 1], &mut rng),
    }
}

/// Error of `backward` for a random linear functional of the output.
pub fn mlp_error(topology: &[usize], seed: u64) -> f64 {
    let mut rng = substream(seed, 1);
    let net = random_mlp(topology, &mut rng);
    let x: Vec<f64> = random_obs(&mut rng).to_vec();
    let w: Vec<f64> = (0..net.output_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let loss = |p: &[f64]| {
        let n = Mlp::from_params(topology, p.to_vec()).expect("valid topology");
        let out = n.forward(&x).expect("input size");
        out.output().iter().zip(&w).map(|(o, c)| o * c).sum::<f64>()
    };
    let mut cache = net.forward(&x).expect("input size");
    let mut g = vec![0.0; net.params().len()];
    net.backward(&mut cache, &w, &mut g).expect("output size");
    relative_error(&g, &central_difference(net.params(), loss))
}

/// Random samples whose probability ratios stay off the clip kinks.
pub fn random_batch(policy: &ActorCritic, rng: &mut impl Rng, n: usize, eps: f64) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let obs = random_obs(rng);
            let action = 0.05 + 0.9 * rng.random::<f64>();
            let logp = policy.beta(obs).log_prob(action);
            let z: f64 = StandardNormal.sample(rng);
            let mut shift = 0.3 * z;
            let r = (-shift).exp();
            if ((r - (1.0 + eps)).abs() < 0.02) || ((r - (1.0 - eps)).abs() < 0.02) {
                shift += 0.1;
            }
            Sample {
                obs,
                action,
                old_log_prob: logp + shift,
                advantage: StandardNormal.sample(rng),
                value_target: rng.random::<f64>(),
            }
        })
        .collect()
}

/// Errors of the full surrogate gradient: `(joint, actor, critic)`.
pub fn surrogate_error(seed: u64, cfg: &PpoConfig) -> (f64, f64, f64) {
    let policy = random_policy(seed);
    let mut rng = substream(seed, 2);
    let batch = random_batch(&policy, &mut rng, 150, cfg.clip_epsilon);
    let (_, ga, gc) = ppo_loss_grad(&policy, &batch, cfg);
    let na = policy.actor.params().len();
    let mut joint: Vec<f64> = policy.actor.params().to_vec();
    joint.extend_from_slice(policy.critic.params());
    let loss = |p: &[f64]| {
        let pol = ActorCritic {
            actor: Mlp::from_params(&[2, 6, 6, 2], p[..na].to_vec()).expect("actor"),
            critic: Mlp::from_params(&[2, 6, 6, 1], p[na..].to_vec()).expect("critic"),
        };
        ppo_loss(&pol, &batch, cfg).total
    };
    let num = central_difference(&joint, loss);
    let mut ana = ga.clone();
    ana.extend_from_slice(&gc);
    (
        relative_error(&ana, &num),
        relative_error(&ga, &num[..na]),
        relative_error(&gc, &num[na..]),
    )
}
