use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;

/// Fully connected network: tanh hidden layers, linear output.
///
/// Parameters are stored flat, layer by layer: weights (row-major, `out × in`) then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of every layer from one forward pass, input first.
#[derive(Debug, Clone)]
pub struct Cache {
    pub activations: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Mlp, LearnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(LearnError::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Mlp { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] })
    }

    /// Uniform Glorot weights and zero biases; the last layer's weights are scaled by
    /// `output_gain`.
    pub fn init<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Mlp, LearnError> {
        let mut net = Mlp::zeros(sizes)?;
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt() * if l + 1 == layers { output_gain } else { 1.0 };
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Mlp, LearnError> {
        let mut net = Mlp::zeros(&sizes)?;
        if params.len() != net.params.len() {
            return Err(LearnError::DimensionMismatch { expected: net.params.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(LearnError::InvalidConfig("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(self.forward_cached(x)?.activations.pop().expect("output layer"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache, LearnError> {
        if x.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &activations[l];
            let mut y: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(y);
            off += n_in * n_out + n_out;
        }
        Ok(Cache { activations })
    }

    /// Back-propagates `upstream = ∂L/∂output`, adding `∂L/∂params` into `grad`; returns
    /// `∂L/∂input`.
    pub fn backward(&self, cache: &Cache, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                // tanh' = 1 − y²
                for (d, y) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[l];
            let input = &cache.activations[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * n_in;
                for i in 0..n_in {
                    gw[row + i] += d * input[i];
                    next[i] += w[row + i] * d;
                }
            }
            delta = next;
        }
        delta
    }

    /// Parameter gradient of `upstream · f(x)`.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, LearnError> {
        if upstream.len() != self.output_dim() {
            return Err(LearnError::DimensionMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let cache = self.forward_cached(x)?;
        let mut g = vec![0.0; self.params.len()];
        self.backward(&cache, upstream, &mut g);
        Ok(g)
    }
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm` (no-op when `max_norm ≤ 0`).
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}
