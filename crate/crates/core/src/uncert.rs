//! Online uncertainty objectives: the scalar uncertainty head, logit sampling
//! (absolute uncertainty), uncertainty-weighted feature mix-up (relative
//! uncertainty), Gaussian feature noise with a KL regularizer, and Monte-Carlo
//! dropout aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Mlp, MlpCache};
use crate::occ::{self, IGNORE};
use crate::rng;

/// Floor added to every predicted uncertainty.
pub const SIGMA_MIN: f64 = 1e-3;
pub const HEAD_HIDDEN: usize = 32;
/// Stochastic passes used by Monte-Carlo dropout at inference.
pub const MCD_PASSES: usize = 40;
/// Weight of the KL term of Gaussian feature noise training.
pub const DUL_KL_WEIGHT: f64 = 0.01;

/// Map from a voxel feature to a positive uncertainty:
/// `softplus(MLP(v)) + SIGMA_MIN`, with one rectified hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyHead {
    pub mlp: Mlp,
}

impl UncertaintyHead {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64, tags: &[u64]) -> Self {
        Self {
            mlp: Mlp::init(&[input_dim, HEAD_HIDDEN, output_dim], seed, tags),
        }
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn forward(&self, v: &[f64]) -> (Vec<f64>, MlpCache) {
        let cache = self.mlp.forward(v, None);
        let sigma = cache.output().iter().map(|&o| nn::softplus(o) + SIGMA_MIN).collect();
        (sigma, cache)
    }

    pub fn sigma(&self, v: &[f64]) -> Vec<f64> {
        self.forward(v).0
    }

    /// Backpropagates `d loss / d sigma` into `grad`.
    pub fn backward(&self, cache: &MlpCache, d_sigma: &[f64], grad: &mut [f64], grad_input: Option<&mut [f64]>) {
        let d_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(d_sigma)
            .map(|(&o, &d)| d * nn::sigmoid(o))
            .collect();
        self.mlp.backward(cache, &d_out, grad, grad_input);
    }
}

/// `z + sigma * noise` with the scalar sigma broadcast over all classes.
pub fn sample_absolute(z: &[f64], sigma: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if noise.len() != z.len() {
        return Err(Error::DimensionMismatch("noise width differs from logits".into()));
    }
    Ok(z.iter().zip(noise).map(|(a, e)| a + sigma * e).collect())
}

/// Cross-entropy `-log softmax(z)[label]` and its gradient `softmax(z) - e_label`.
pub fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let ls = occ::log_softmax(z);
    let loss = -ls[label];
    let mut grad: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean cross-entropy of sampled logits over non-ignored voxels.
///
/// `sampled` is row-major with `width` columns. Returns the loss and its
/// gradient with respect to `sampled` (zero rows for ignored voxels).
pub fn loss_absolute(sampled: &[f64], width: usize, labels: &[u16]) -> Result<(f64, Vec<f64>)> {
    if sampled.len() != labels.len() * width {
        return Err(Error::DimensionMismatch("sampled logits vs labels".into()));
    }
    let valid = labels.iter().filter(|&&l| l != IGNORE).count();
    if valid == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let scale = 1.0 / valid as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; sampled.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE {
            continue;
        }
        let (loss, g) = cross_entropy(&sampled[i * width..(i + 1) * width], l as usize);
        total += loss;
        for (o, v) in grad[i * width..(i + 1) * width].iter_mut().zip(g) {
            *o = v * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Share of voxel `i` in a mixed pair: `sigma_i / (sigma_i + sigma_j)`.
pub fn mixing_weight(sigma_i: f64, sigma_j: f64) -> f64 {
    sigma_i / (sigma_i + sigma_j)
}

/// `d lambda / d sigma_i` and `d lambda / d sigma_j`.
pub fn mixing_weight_grad(sigma_i: f64, sigma_j: f64) -> (f64, f64) {
    let s = sigma_i + sigma_j;
    (sigma_j / (s * s), -sigma_i / (s * s))
}

/// One mixed voxel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPair {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
    /// `lambda * v_i + (1 - lambda) * v_j`.
    pub mixed: Vec<f64>,
    /// `onehot(y_i) + onehot(y_j)`, not weighted by lambda.
    pub target: Vec<f64>,
}

/// Pairs every non-ignored voxel with a partner drawn from a seeded
/// permutation of the non-ignored voxels.
///
/// `features` is row-major `n x feature_dim`; `sigmas` are the current head
/// outputs per voxel.
pub fn make_pairs(
    labels: &[u16],
    features: &[f64],
    feature_dim: usize,
    sigmas: &[f64],
    width: usize,
    seed: u64,
    tags: &[u64],
) -> Result<Vec<MixPair>> {
    let n = labels.len();
    if features.len() != n * feature_dim || sigmas.len() != n {
        return Err(Error::DimensionMismatch("pair inputs".into()));
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| labels[i] != IGNORE).collect();
    if eligible.len() < 2 {
        return Err(Error::InvalidArgument("need at least two non-ignored voxels to pair".into()));
    }
    let perm = rng::permutation(seed, tags, eligible.len());
    Ok(eligible
        .iter()
        .zip(&perm)
        .map(|(&i, &p)| {
            let j = eligible[p];
            let lambda = mixing_weight(sigmas[i], sigmas[j]);
            let vi = &features[i * feature_dim..(i + 1) * feature_dim];
            let vj = &features[j * feature_dim..(j + 1) * feature_dim];
            let mixed = vi.iter().zip(vj).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let mut target = vec![0.0; width];
            target[labels[i] as usize] += 1.0;
            target[labels[j] as usize] += 1.0;
            MixPair {
                i,
                j,
                lambda,
                mixed,
                target,
            }
        })
        .collect())
}

/// `-sum_c target_c log softmax(z)_c` and its gradient `(sum target) p - target`.
pub fn loss_relative(mixed_logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let ls = occ::log_softmax(mixed_logits);
    let mass: f64 = target.iter().sum();
    let loss = -ls.iter().zip(target).map(|(l, t)| l * t).sum::<f64>();
    let grad = ls.iter().zip(target).map(|(l, t)| mass * l.exp() - t).collect();
    (loss, grad)
}

/// Gaussian feature perturbation `v + sigma * noise` and the KL divergence of
/// `N(v, diag sigma^2)` from the standard normal.
pub fn dul_transform(v: &[f64], sigma: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
    if sigma.len() != v.len() || noise.len() != v.len() {
        return Err(Error::DimensionMismatch("dul inputs".into()));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("every sigma component must be positive".into()));
    }
    let perturbed = v.iter().zip(sigma).zip(noise).map(|((a, s), e)| a + s * e).collect();
    Ok((perturbed, dul_kl(v, sigma)))
}

pub fn dul_kl(v: &[f64], sigma: &[f64]) -> f64 {
    0.5 * v
        .iter()
        .zip(sigma)
        .map(|(m, s)| s * s + m * m - 1.0 - (s * s).ln())
        .sum::<f64>()
}

/// `d kl / d sigma_k = sigma_k - 1 / sigma_k`.
pub fn dul_kl_grad_sigma(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| s - 1.0 / s).collect()
}

/// Mean logits of `K` stochastic passes and the normalized entropy of the
/// mean predictive distribution, in [0, 1].
pub fn mcd_aggregate(samples: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let k = samples.len();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let width = samples[0].len();
    if samples.iter().any(|s| s.len() != width) {
        return Err(Error::DimensionMismatch("sample widths differ".into()));
    }
    let mut mean = vec![0.0; width];
    let mut mean_p = vec![0.0; width];
    for s in samples {
        let p = occ::softmax(s)?;
        for c in 0..width {
            mean[c] += s[c];
            mean_p[c] += p[c];
        }
    }
    let kf = k as f64;
    for c in 0..width {
        mean[c] /= kf;
        mean_p[c] /= kf;
    }
    let entropy: f64 = mean_p.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    let normalized = if width > 1 {
        (entropy / (width as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok((mean, normalized))
}
