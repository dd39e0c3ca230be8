//! Small dense network with hand-written reverse mode.
//!
//! Parameters live in one flat `Vec<f64>`. For each layer with `n_in`
//! inputs and `n_out` outputs the slice holds the `n_out × n_in` weight
//! matrix in row-major order followed by the `n_out` biases. Hidden layers
//! use ReLU; the output layer is affine.
//!
//! Checkpoints are JSON:
//!
//! ```json
//! {"format": "gbwm-mlp/1", "topology": [2, 6, 6, 2], "params": [ ... ]}
//! ```
//!
//! with `params` in exactly the flat layout above.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "gbwm-mlp/1";

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("topology needs at least an input and an output layer")]
    Topology,
    #[error("unsupported checkpoint format `{0}`")]
    Format(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    topology: Vec<usize>,
    params: Vec<f64>,
}

/// Activations from one forward pass, reused by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (after ReLU for hidden layers).
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(topology: &[usize]) -> usize {
    topology.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(topology: &[usize]) -> Result<Self, NeuralError> {
        if topology.len() < 2 || topology.contains(&0) {
            return Err(NeuralError::Topology);
        }
        Ok(Self {
            topology: topology.to_vec(),
            params: vec![0.0; param_count(topology)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(topology: &[usize], rng: &mut R) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(topology)?;
        let mut off = 0;
        for w in topology.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = rng.random_range(-limit..limit);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn from_params(topology: &[usize], params: Vec<f64>) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(topology)?;
        if params.len() != net.params.len() {
            return Err(NeuralError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn topology(&self) -> &[usize] {
        &self.topology
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.topology[0]
    }

    pub fn output_dim(&self) -> usize {
        self.topology[self.topology.len() - 1]
    }

    fn n_layers(&self) -> usize {
        self.topology.len() - 1
    }

    /// Multiplies the last layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.topology.len();
        let (n_in, n_out) = (self.topology[n - 2], self.topology[n - 1]);
        let len = self.params.len();
        for p in &mut self.params[len - (n_in * n_out + n_out)..] {
            *p *= factor;
        }
    }

    /// Forward pass into a reusable cache.
    pub fn forward_into(&self, input: &[f64], cache: &mut ForwardCache) -> Result<(), NeuralError> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::Shape {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let nl = self.n_layers();
        cache.acts.resize_with(nl + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..nl {
            let (n_in, n_out) = (self.topology[l], self.topology[l + 1]);
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for i in 0..n_in {
                    z += row[i] * x[i];
                }
                y.push(if l + 1 < nl { z.max(0.0) } else { z });
            }
            off += n_in * n_out + n_out;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache, NeuralError> {
        let mut cache = ForwardCache::default();
        self.forward_into(input, &mut cache)?;
        Ok(cache)
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂output`.
    ///
    /// The cache must come from a forward pass of this network with its
    /// current parameters.
    pub fn backward(&self, cache: &mut ForwardCache, d_output: &[f64], grads: &mut [f64]) -> Result<(), NeuralError> {
        let nl = self.n_layers();
        if cache.acts.len() != nl + 1 {
            return Err(NeuralError::Shape {
                expected: nl + 1,
                got: cache.acts.len(),
            });
        }
        if d_output.len() != self.output_dim() {
            return Err(NeuralError::Shape {
                expected: self.output_dim(),
                got: d_output.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NeuralError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        cache.deltas.resize_with(2, Vec::new);
        let (mut delta, mut prev) = (std::mem::take(&mut cache.deltas[0]), std::mem::take(&mut cache.deltas[1]));
        delta.clear();
        delta.extend_from_slice(d_output);
        let mut off = self.params.len();
        for l in (0..nl).rev() {
            let (n_in, n_out) = (self.topology[l], self.topology[l + 1]);
            off -= n_in * n_out + n_out;
            let x = &cache.acts[l];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] += d * x[i];
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                prev.clear();
                prev.resize(n_in, 0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        prev[i] += row[i] * d;
                    }
                }
                // ReLU gate: x is the post-activation of layer l-1.
                for i in 0..n_in {
                    if x[i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut prev);
            }
        }
        cache.deltas[0] = delta;
        cache.deltas[1] = prev;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            topology: self.topology.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NeuralError> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NeuralError::Format(ck.format.clone()));
        }
        Self::from_params(&ck.topology, ck.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub topology: Vec<usize>,
    pub params: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NeuralError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NeuralError::Shape {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn param_count_formula() {
        for k in [1, 2, 3] {
            assert_eq!(param_count(&[2, 6, 6, k]), 2 * 6 + 6 + 6 * 6 + 6 + 6 * k + k);
        }
        let net = Mlp::new(&[2, 6, 6, 2], &mut substream(0, 0)).unwrap();
        assert_eq!(net.params().len(), 74);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[2, 6, 6, 3]).unwrap();
        let c = net.forward(&[0.3, -7.0]).unwrap();
        assert_eq!(c.output(), &[0.0; 3]);
    }

    #[test]
    fn single_layer_is_affine() {
        // 2 -> 2 with W = [[1, 2], [3, 4]], b = [0.5, -1]
        let net = Mlp::from_params(&[2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let c = net.forward(&[0.5, 0.6]).unwrap();
        approx::assert_abs_diff_eq!(c.output()[0], 0.5 + 1.2 + 0.5, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(c.output()[1], 1.5 + 2.4 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn relu_blocks_negative_units() {
        // hidden unit 0 gets -1 (killed), unit 1 gets +2; output sums both.
        let params = vec![
            -1.0, 0.0, // w hidden0
            2.0, 0.0, // w hidden1
            0.0, 0.0, // b hidden
            5.0, 1.0, // w out
            0.0, // b out
        ];
        let net = Mlp::from_params(&[2, 2, 1], params).unwrap();
        let c = net.forward(&[1.0, 0.0]).unwrap();
        assert_eq!(c.output(), &[2.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = Mlp::new(&[2, 6, 6, 2], &mut substream(1, 0)).unwrap();
        let mut c = net.forward(&[0.2, 0.9]).unwrap();
        let mut g = vec![0.0; net.params().len()];
        net.backward(&mut c, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn doubling_upstream_doubles_grads() {
        let net = Mlp::new(&[2, 6, 6, 2], &mut substream(2, 0)).unwrap();
        let mut c = net.forward(&[0.2, 0.9]).unwrap();
        let mut g1 = vec![0.0; net.params().len()];
        let mut g2 = g1.clone();
        net.backward(&mut c, &[0.3, -1.1], &mut g1).unwrap();
        net.backward(&mut c, &[0.6, -2.2], &mut g2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[2, 3, 1]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        let mut c = net.forward(&[1.0, 2.0]).unwrap();
        let mut g = vec![0.0; 3];
        assert!(net.backward(&mut c, &[1.0], &mut g).is_err());
        assert!(Mlp::zeros(&[2]).is_err());
        assert!(Mlp::from_params(&[2, 1], vec![0.0; 2]).is_err());
        let mut stale = ForwardCache::default();
        let mut g = vec![0.0; net.params().len()];
        assert!(net.backward(&mut stale, &[1.0], &mut g).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2);
        opt.step(&mut p, &[0.0, 0.0], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut w = vec![1.0];
        let mut opt = Adam::new(1);
        let g = [2.0 * w[0]];
        opt.step(&mut w, &g, 1e-4).unwrap();
        assert!(w[0] < 1.0 && w[0] > 0.0);

        let mut w = vec![1.0, -0.5];
        let mut opt = Adam::new(2);
        for _ in 0..10_000 {
            let g = [2.0 * w[0], 20.0 * w[1]];
            opt.step(&mut w, &g, 1e-2).unwrap();
        }
        assert!(w[0].abs() < 1e-3 && w[1].abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(&[2, 6, 6, 2], &mut substream(3, 0)).unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(Mlp::from_checkpoint(&back).unwrap(), net);
        let bad = Checkpoint {
            format: "other".into(),
            ..back
        };
        assert!(Mlp::from_checkpoint(&bad).is_err());
    }
}
