//! Fully connected layers with hand-written reverse-mode gradients.

use serde::{Deserialize, Serialize};

use crate::rng;

/// Multi-layer perceptron with rectifier hidden activations and a linear
/// output. Parameters live in one flat vector: for each layer the weight
/// matrix (out x in, row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the (masked) output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer, if any were applied.
    masks: Option<Vec<Vec<f64>>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// He-normal weights, zero biases, drawn from stream `(seed, tags)`.
    pub fn init(sizes: &[usize], seed: u64, tags: &[u64]) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut r = rng::stream(seed, tags);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            for p in &mut mlp.params[off..off + fan_in * fan_out] {
                *p = scale * rng::normal(&mut r);
            }
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_hidden(&self) -> usize {
        self.sizes.len() - 2
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0usize, |off, w| {
            let o = *off;
            *off += w[0] * w[1] + w[1];
            Some((o, w[0], w[1]))
        })
    }

    /// Forward pass. `masks[l]`, when given, multiplies hidden layer `l`'s
    /// rectified output elementwise (inverted dropout).
    pub fn forward(&self, x: &[f64], masks: Option<Vec<Vec<f64>>>) -> MlpCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let last = self.sizes.len() - 2;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for (l, (off, n_in, n_out)) in self.offsets().enumerate() {
            let input = &acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
                if let Some(m) = masks.as_ref() {
                    for (v, k) in out.iter_mut().zip(&m[l]) {
                        *v *= k;
                    }
                }
            }
            acts.push(out);
        }
        MlpCache { acts, masks }
    }

    /// Accumulates `d loss / d params` into `grad` and optionally writes
    /// `d loss / d input` into `grad_input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64], grad_input: Option<&mut [f64]>) {
        let layers: Vec<(usize, usize, usize)> = self.offsets().collect();
        let last = layers.len() - 1;
        let mut delta = grad_out.to_vec();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            if l < last {
                // rectifier (and dropout) derivative of this hidden layer's output
                let out = &cache.acts[l + 1];
                for (o, d) in delta.iter_mut().enumerate() {
                    if out[o] <= 0.0 {
                        *d = 0.0;
                    } else if let Some(m) = cache.masks.as_ref() {
                        *d *= m[l][o];
                    }
                }
            }
            let input = &cache.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            delta = prev;
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&delta);
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adaptive moment estimation with optional decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self::with_decay(n, lr, 0.0)
    }

    pub fn with_decay(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if self.weight_decay != 0.0 {
                params[i] *= 1.0 - self.lr * self.weight_decay;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(mlp: &Mlp, x: &[f64], w: &[f64]) -> f64 {
        let c = mlp.forward(x, None);
        c.output().iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut mlp = Mlp::init(&[4, 6, 5, 3], 11, &[1]);
        for (i, p) in mlp.params.iter_mut().enumerate() {
            *p += 0.01 * (i as f64).sin();
        }
        let x = [0.3, -1.2, 0.8, 0.5];
        let w = [0.7, -0.4, 1.1];
        let cache = mlp.forward(&x, None);
        let mut grad = vec![0.0; mlp.num_params()];
        let mut gx = vec![0.0; 4];
        mlp.backward(&cache, &w, &mut grad, Some(&mut gx));
        let h = 1e-6;
        for k in 0..mlp.num_params() {
            let mut a = mlp.clone();
            a.params[k] += h;
            let mut b = mlp.clone();
            b.params[k] -= h;
            let fd = (loss(&a, &x, &w) - loss(&b, &x, &w)) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", grad[k]);
        }
        for k in 0..4 {
            let mut xa = x;
            xa[k] += h;
            let mut xb = x;
            xb[k] -= h;
            let fd = (loss(&mlp, &xa, &w) - loss(&mlp, &xb, &w)) / (2.0 * h);
            assert!((fd - gx[k]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0], None).output(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
