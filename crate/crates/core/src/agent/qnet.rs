//! Fully connected Q-network with ReLU hidden layers and a scalar output,
//! plus manual backpropagation and an Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::StateFeatures;

#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    dims: Vec<usize>,
    /// `weights[l][o * dims[l] + i]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations saved by [`QNet::forward_cache`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input followed by each hidden layer's post-ReLU output.
    acts: Vec<Vec<f64>>,
    pub output: f64,
}

/// Same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &QNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Parameter `k` in the flat order of [`QNet::param`].
    pub fn get(&self, k: usize) -> f64 {
        let mut k = k;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if k < w.len() {
                return w[k];
            }
            k -= w.len();
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl QNet {
    /// He-uniform initialization; `dims` runs from the input width to 1.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = QNet::zeros(dims)?;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let limit = (6.0 / dims[l] as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) || dims[dims.len() - 1] != 1 {
            return Err(Error::InvalidArgument(format!(
                "QNet dims must be positive and end in 1, got {dims:?}"
            )));
        }
        Ok(QNet {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        })
    }

    pub fn from_parts(
        dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let shape = QNet::zeros(&dims)?;
        let ok = weights.len() == shape.weights.len()
            && biases.len() == shape.biases.len()
            && weights
                .iter()
                .zip(&shape.weights)
                .all(|(a, b)| a.len() == b.len())
            && biases
                .iter()
                .zip(&shape.biases)
                .all(|(a, b)| a.len() == b.len());
        if !ok {
            return Err(Error::Dimension("QNet parameters do not match dims".into()));
        }
        Ok(QNet {
            dims,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter order: layer by layer, weights then biases.
    pub fn param(&self, k: usize) -> f64 {
        *self.locate(k)
    }

    pub fn set_param(&mut self, k: usize, v: f64) {
        *self.locate_mut(k) = v;
    }

    fn locate(&self, mut k: usize) -> &f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if k < w.len() {
                return &w[k];
            }
            k -= w.len();
            if k < b.len() {
                return &b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    fn locate_mut(&mut self, mut k: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if k < w.len() {
                return &mut w[k];
            }
            k -= w.len();
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    fn layer(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let n_in = self.dims[l];
        self.biases[l]
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_cache(x).output
    }

    pub fn forward_cache(&self, x: &[f64]) -> Cache {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(last + 1);
        acts.push(x.to_vec());
        for l in 0..last {
            let mut h = self.layer(l, &acts[l]);
            for v in &mut h {
                *v = v.max(0.0);
            }
            acts.push(h);
        }
        let output = self.layer(last, &acts[last])[0];
        Cache { acts, output }
    }

    /// Adds `d_out * d(output)/d(params)` into `grad`.
    pub fn backward(&self, cache: &Cache, d_out: f64, grad: &mut Gradients) {
        let mut delta = vec![d_out];
        for l in (0..self.weights.len()).rev() {
            let n_in = self.dims[l];
            let input = &cache.acts[l];
            let mut d_in = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.biases[l][o] += d;
                let row = o * n_in..(o + 1) * n_in;
                for ((g, w), (x, di)) in grad.weights[l][row.clone()]
                    .iter_mut()
                    .zip(&self.weights[l][row])
                    .zip(input.iter().zip(d_in.iter_mut()))
                {
                    *g += d * x;
                    *di += d * w;
                }
            }
            if l > 0 {
                // ReLU mask of the layer that produced `input`.
                for (di, x) in d_in.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            delta = d_in;
        }
    }
}

/// One Q value per candidate, all scored by the same network.
pub fn q_forward(net: &QNet, s: &StateFeatures) -> Result<Vec<f64>> {
    s.rows
        .iter()
        .map(|row| {
            if row.len() != net.input_width() {
                return Err(Error::Dimension(format!(
                    "feature width {} does not match QNet input {}",
                    row.len(),
                    net.input_width()
                )));
            }
            Ok(net.forward(row))
        })
        .collect()
}

/// Update rule applied to the gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    #[default]
    Sgd,
    /// Adam with the usual defaults for the moment decay rates.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &QNet, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut QNet, grad: &Gradients) {
        if self.kind == OptimizerKind::Sgd {
            let lr = self.learning_rate;
            for l in 0..net.weights.len() {
                for (p, g) in net.weights[l].iter_mut().zip(&grad.weights[l]) {
                    *p -= lr * g;
                }
                for (p, g) in net.biases[l].iter_mut().zip(&grad.biases[l]) {
                    *p -= lr * g;
                }
            }
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for l in 0..net.weights.len() {
            update(
                &mut net.weights[l],
                &grad.weights[l],
                &mut self.m.weights[l],
                &mut self.v.weights[l],
            );
            update(
                &mut net.biases[l],
                &grad.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_give_zero_q() {
        let net = QNet::zeros(&[3, 4, 1]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = QNet::new(&[3, 5, 4, 1], &mut rng).unwrap();
        let x = [0.3, -0.7, 0.9];
        let mut g = Gradients::zeros_like(&net);
        net.backward(&net.forward_cache(&x), 1.0, &mut g);
        let h = 1e-6;
        for k in 0..net.param_count() {
            let mut p = net.clone();
            p.set_param(k, net.param(k) + h);
            let up = p.forward(&x);
            p.set_param(k, net.param(k) - h);
            let down = p.forward(&x);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g.get(k)).abs() < 1e-6,
                "param {k}: {fd} vs {}",
                g.get(k)
            );
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(QNet::zeros(&[3, 2]).is_err());
        assert!(QNet::zeros(&[3]).is_err());
    }
}
