use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, MlpCache};
use crate::occ::{VoxelBatch, IGNORE};
use crate::par;
use crate::rng;
use crate::uncert::{self, UncertaintyHead, DUL_KL_WEIGHT, MCD_PASSES};

pub const HIDDEN: usize = 32;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_LR: f64 = 2e-4;
/// Floor of the normalized-entropy uncertainty stored by Monte-Carlo dropout.
pub const MCD_SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Hau,
    Dul,
    Mcd,
    ReliOcc,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Hau, Mode::Dul, Mode::Mcd, Mode::ReliOcc];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Hau => "hau",
            Mode::Dul => "dul",
            Mode::Mcd => "mcd",
            Mode::ReliOcc => "reliocc",
        }
    }

    /// Whether dumps of this mode carry a per-voxel uncertainty.
    pub fn has_sigma(self) -> bool {
        matches!(self, Mode::Hau | Mode::Mcd | Mode::ReliOcc)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown training mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the absolute uncertainty loss in `reliocc` mode.
    pub alpha: f64,
    /// Weight of the relative uncertainty loss in `reliocc` mode.
    pub beta: f64,
    /// Weight of the absolute uncertainty loss in `hau` mode.
    pub hau_weight: f64,
    pub dul_kl_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: DEFAULT_LR,
            alpha: 4.0,
            beta: 6.0,
            hau_weight: 1.0,
            dul_kl_weight: DUL_KL_WEIGHT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Recipe of the reference experiment: longer training than the default
    /// budget, seeded with [`super::REFERENCE_SEED`].
    pub fn reference() -> Self {
        Self {
            epochs: 90,
            seed: super::REFERENCE_SEED,
            ..Self::default()
        }
    }
}

/// Loss terms of one step. `occ`, `au` and `ru` are class-weighted means
/// (normalized by the minibatch's total class weight), `kl` is a plain mean,
/// and `total` is the weighted sum that was differentiated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub occ: f64,
    pub au: f64,
    pub ru: f64,
    pub kl: f64,
    pub total: f64,
}

/// Per-voxel classifier `d -> 32 -> 32 -> S+1` with a scalar uncertainty head
/// and a per-dimension feature-noise head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNet {
    pub classifier: Mlp,
    pub head: UncertaintyHead,
    pub dul_head: UncertaintyHead,
    pub dropout: f64,
    /// Cross-entropy weight per class, set from the training split.
    pub class_weights: Vec<f64>,
    pub optimizer: Adam,
    pub steps: u64,
    pub trained_mode: Option<Mode>,
}

impl ToyNet {
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        let w = num_classes + 1;
        let classifier = Mlp::init(&[feature_dim, HIDDEN, HIDDEN, w], seed, &[rng::TAG_INIT, 0]);
        let head = UncertaintyHead::new(feature_dim, 1, seed, &[rng::TAG_INIT, 1]);
        let dul_head = UncertaintyHead::new(feature_dim, feature_dim, seed, &[rng::TAG_INIT, 2]);
        let n = classifier.num_params() + head.num_params() + dul_head.num_params();
        Self {
            classifier,
            head,
            dul_head,
            dropout: DEFAULT_DROPOUT,
            class_weights: vec![1.0; w],
            optimizer: Adam::new(n, DEFAULT_LR),
            steps: 0,
            trained_mode: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn width(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.classifier.num_params() + self.head.num_params() + self.dul_head.num_params()
    }

    fn offsets(&self) -> (usize, usize) {
        let h = self.classifier.num_params();
        (h, h + self.head.num_params())
    }

    /// All parameters as one vector: classifier, uncertainty head, noise head.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.classifier.params.clone();
        v.extend(&self.head.mlp.params);
        v.extend(&self.dul_head.mlp.params);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let (h, d) = self.offsets();
        self.classifier.params.copy_from_slice(&v[..h]);
        self.head.mlp.params.copy_from_slice(&v[h..d]);
        self.dul_head.mlp.params.copy_from_slice(&v[d..]);
    }

    /// `(name, range)` of each parameter tensor in [`ToyNet::params`] order.
    pub fn tensors(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (name, mlp) in [
            ("classifier", &self.classifier),
            ("head", &self.head.mlp),
            ("dul_head", &self.dul_head.mlp),
        ] {
            for (l, w) in mlp.sizes.windows(2).enumerate() {
                out.push((format!("{name}.w{l}"), off..off + w[0] * w[1]));
                off += w[0] * w[1];
                out.push((format!("{name}.b{l}"), off..off + w[1]));
                off += w[1];
            }
        }
        out
    }

    fn check_width(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature width {} != network input {}",
                v.len(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Inverted-dropout multipliers for the hidden layers, `None` when the
    /// rate is zero.
    pub fn dropout_masks(&self, seed: u64, tags: &[u64]) -> Option<Vec<Vec<f64>>> {
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        let mut r = rng::stream(seed, tags);
        let hidden = &self.classifier.sizes[1..self.classifier.sizes.len() - 1];
        Some(
            hidden
                .iter()
                .map(|&h| {
                    (0..h)
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    /// Logits of one feature vector, optionally with dropout masks.
    pub fn forward(&self, v: &[f64], masks: Option<Vec<Vec<f64>>>) -> Result<Vec<f64>> {
        self.check_width(v)?;
        Ok(self.classifier.forward(v, masks).acts.pop().unwrap())
    }

    /// Scalar uncertainty of one feature vector.
    pub fn sigma(&self, v: &[f64]) -> Result<f64> {
        self.check_width(v)?;
        Ok(self.head.sigma(v)[0])
    }

    /// Sets the cross-entropy weights to inverse class frequencies of the
    /// non-ignored labels, normalized to mean 1 over present classes.
    /// Absent classes get weight 0.
    pub fn set_class_weights(&mut self, labels: &[u16]) {
        let w = self.width();
        let mut counts = vec![0usize; w];
        for &l in labels.iter().filter(|&&l| l != IGNORE) {
            counts[l as usize] += 1;
        }
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
        let present = counts.iter().filter(|&&c| c > 0).count();
        let mean = inv.iter().sum::<f64>() / present.max(1) as f64;
        self.class_weights = inv.iter().map(|x| if mean > 0.0 { x / mean } else { 0.0 }).collect();
    }
}

fn features_f64(batch: &VoxelBatch, i: usize) -> Result<Vec<f64>> {
    Ok(batch
        .feature_row(i)
        .ok_or(Error::MissingField("features"))?
        .iter()
        .map(|&x| x as f64)
        .collect())
}

struct HeadState {
    sigma: f64,
    cache: MlpCache,
    d_sigma: f64,
}

struct ChunkOut {
    grad: Vec<f64>,
    occ: f64,
    au: f64,
    kl: f64,
    heads: Vec<Option<HeadState>>,
}

/// Loss breakdown and gradient with respect to [`ToyNet::params`] for the
/// voxels `idx` of `batch` at optimizer step `step`. All randomness (logit
/// noise, feature noise, dropout masks, pairing) is keyed by `(seed, step,
/// voxel)`.
pub fn loss_and_grad(
    net: &ToyNet,
    batch: &VoxelBatch,
    idx: &[usize],
    mode: Mode,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.width() != net.width() {
        return Err(Error::DimensionMismatch("batch classes vs network output".into()));
    }
    if batch.feature_dim != net.feature_dim() {
        return Err(Error::DimensionMismatch("batch features vs network input".into()));
    }
    if idx.len() < 2 || idx.iter().any(|&i| batch.labels[i] == IGNORE) {
        return Err(Error::InvalidArgument(
            "a training step needs at least two voxels, none ignored".into(),
        ));
    }
    let np = net.num_params();
    let (head_off, dul_off) = net.offsets();
    let w = net.width();
    let d = net.feature_dim();
    let b = idx.len();
    let inv_b = 1.0 / b as f64;
    let seed = cfg.seed;
    let weight_sum: f64 = idx.iter().map(|&i| net.class_weights[batch.labels[i] as usize]).sum();
    let weight_sum = if weight_sum > 0.0 { weight_sum } else { 1.0 };
    let au_weight = match mode {
        Mode::Hau => cfg.hau_weight,
        Mode::ReliOcc => cfg.alpha,
        _ => 0.0,
    };
    let uses_head = matches!(mode, Mode::Hau | Mode::ReliOcc);

    let positions: Vec<usize> = (0..b).collect();
    let chunks = par::map_chunks(&positions, par::REDUCE_CHUNK, |_, chunk| -> Result<ChunkOut> {
        let mut out = ChunkOut {
            grad: vec![0.0; np],
            occ: 0.0,
            au: 0.0,
            kl: 0.0,
            heads: Vec::with_capacity(chunk.len()),
        };
        for &k in chunk {
            let i = idx[k];
            let key = i as u64;
            let y = batch.labels[i] as usize;
            let v = features_f64(batch, i)?;

            let mut input = v.clone();
            let mut dul = None;
            if mode == Mode::Dul {
                let (sd, cd) = net.dul_head.forward(&v);
                let eps = rng::normal_vec(seed, &[rng::TAG_DUL, step, key], d);
                let (perturbed, kl) = uncert::dul_transform(&v, &sd, &eps)?;
                out.kl += kl;
                input = perturbed;
                dul = Some((sd, cd, eps));
            }
            let masks = if mode == Mode::Mcd {
                net.dropout_masks(seed, &[rng::TAG_DROPOUT, step, key])
            } else {
                None
            };
            let cache = net.classifier.forward(&input, masks);
            let z = cache.output();

            let (ce, g) = uncert::cross_entropy(z, y);
            let wy = net.class_weights[y] / weight_sum;
            out.occ += wy * ce;
            let mut dz: Vec<f64> = g.iter().map(|x| wy * x).collect();

            let mut head = None;
            if uses_head {
                let (s, hc) = net.head.forward(&v);
                let eps = rng::normal_vec(seed, &[rng::TAG_LOGIT_NOISE, step, key], w);
                let sampled = uncert::sample_absolute(z, s[0], &eps)?;
                let (ce2, g2) = uncert::cross_entropy(&sampled, y);
                out.au += wy * ce2;
                let scale = au_weight * wy;
                for (a, g2c) in dz.iter_mut().zip(&g2) {
                    *a += scale * g2c;
                }
                let d_sigma = scale * g2.iter().zip(&eps).map(|(a, e)| a * e).sum::<f64>();
                head = Some(HeadState {
                    sigma: s[0],
                    cache: hc,
                    d_sigma,
                });
            }
            out.heads.push(head);

            let mut gi = vec![0.0; d];
            let want_input = dul.is_some();
            net.classifier
                .backward(&cache, &dz, &mut out.grad[..head_off], want_input.then_some(&mut gi[..]));
            if let Some((sd, cd, eps)) = dul {
                let kl_grad = uncert::dul_kl_grad_sigma(&sd);
                let ds: Vec<f64> = (0..d)
                    .map(|m| gi[m] * eps[m] + cfg.dul_kl_weight * inv_b * kl_grad[m])
                    .collect();
                net.dul_head.backward(&cd, &ds, &mut out.grad[dul_off..], None);
            }
        }
        Ok(out)
    });

    let mut grad = vec![0.0; np];
    let mut loss = LossBreakdown::default();
    let mut heads: Vec<Option<HeadState>> = Vec::with_capacity(b);
    for c in chunks {
        let c = c?;
        loss.occ += c.occ;
        loss.au += c.au;
        loss.kl += c.kl;
        par::accumulate_into(&mut grad, std::slice::from_ref(&c.grad));
        heads.extend(c.heads);
    }
    loss.kl *= inv_b;

    if mode == Mode::ReliOcc {
        let perm = rng::permutation(seed, &[rng::TAG_PAIRS, step], b);
        let sig: Vec<f64> = heads.iter().map(|h| h.as_ref().unwrap().sigma).collect();
        let scale = cfg.beta / weight_sum;
        let pairs = par::map_chunks(&positions, par::REDUCE_CHUNK, |_, chunk| -> Result<_> {
            let mut g = vec![0.0; head_off];
            let mut l_sum = 0.0;
            let mut contrib = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let j = perm[k];
                let (vi, vj) = (features_f64(batch, idx[k])?, features_f64(batch, idx[j])?);
                let lambda = uncert::mixing_weight(sig[k], sig[j]);
                let mixed: Vec<f64> = vi.iter().zip(&vj).map(|(a, c)| lambda * a + (1.0 - lambda) * c).collect();
                let cache = net.classifier.forward(&mixed, None);
                let (yi, yj) = (batch.labels[idx[k]] as usize, batch.labels[idx[j]] as usize);
                let mut target = vec![0.0; w];
                target[yi] += net.class_weights[yi];
                target[yj] += net.class_weights[yj];
                let (l, gz) = uncert::loss_relative(cache.output(), &target);
                l_sum += l;
                let dz: Vec<f64> = gz.iter().map(|x| scale * x).collect();
                let mut gi = vec![0.0; d];
                net.classifier.backward(&cache, &dz, &mut g, Some(&mut gi));
                let d_lambda: f64 = gi.iter().zip(vi.iter().zip(&vj)).map(|(a, (p, q))| a * (p - q)).sum();
                let (dli, dlj) = uncert::mixing_weight_grad(sig[k], sig[j]);
                contrib.push((k, j, d_lambda * dli, d_lambda * dlj));
            }
            Ok((g, l_sum, contrib))
        });
        for p in pairs {
            let (g, l, contrib) = p?;
            par::accumulate_into(&mut grad[..head_off], std::slice::from_ref(&g));
            loss.ru += l;
            for (k, j, dk, dj) in contrib {
                heads[k].as_mut().unwrap().d_sigma += dk;
                heads[j].as_mut().unwrap().d_sigma += dj;
            }
        }
        loss.ru /= weight_sum;
    }

    if uses_head {
        let partials = par::map_chunks(&heads, par::REDUCE_CHUNK, |_, chunk| {
            let mut g = vec![0.0; dul_off - head_off];
            for h in chunk.iter().flatten() {
                if h.d_sigma != 0.0 {
                    net.head.backward(&h.cache, &[h.d_sigma], &mut g, None);
                }
            }
            g
        });
        par::accumulate_into(&mut grad[head_off..dul_off], &partials);
    }

    loss.total = match mode {
        Mode::Baseline | Mode::Mcd => loss.occ,
        Mode::Hau => loss.occ + cfg.hau_weight * loss.au,
        Mode::Dul => loss.occ + cfg.dul_kl_weight * loss.kl,
        Mode::ReliOcc => loss.occ + cfg.alpha * loss.au + cfg.beta * loss.ru,
    };
    Ok((loss, grad))
}

/// One optimizer update on the voxels `idx`; returns the loss terms.
pub fn train_step(
    net: &mut ToyNet,
    batch: &VoxelBatch,
    idx: &[usize],
    mode: Mode,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let step = net.steps;
    let (loss, grad) = loss_and_grad(net, batch, idx, mode, cfg, step)?;
    if !loss.total.is_finite() {
        return Err(Error::Divergence {
            iteration: step as usize,
            what: "training loss",
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iteration: step as usize,
            what: "gradient",
        });
    }
    let mut p = net.params();
    net.optimizer.lr = cfg.lr;
    net.optimizer.step(&mut p, &grad);
    net.set_params(&p);
    net.steps += 1;
    Ok(loss)
}

/// Mean loss terms over the steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Trains on the non-ignored voxels of `train` with shuffled minibatches
/// drawn from a seeded permutation per epoch. A trailing minibatch with fewer
/// than two voxels is skipped.
pub fn train(net: &mut ToyNet, train: &VoxelBatch, mode: Mode, cfg: &TrainConfig) -> Result<Vec<EpochLoss>> {
    train.validate()?;
    if cfg.batch_size < 2 {
        return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
    }
    let eligible = train.valid_indices();
    if eligible.len() < 2 {
        return Err(Error::InvalidArgument("training split has fewer than two labelled voxels".into()));
    }
    net.set_class_weights(&train.labels);
    net.trained_mode = Some(mode);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let perm = rng::permutation(cfg.seed, &[rng::TAG_SHUFFLE, epoch as u64], eligible.len());
        let order: Vec<usize> = perm.iter().map(|&p| eligible[p]).collect();
        let mut sum = LossBreakdown::default();
        let mut steps = 0usize;
        for mb in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let l = train_step(net, train, mb, mode, cfg)?;
            sum.occ += l.occ;
            sum.au += l.au;
            sum.ru += l.ru;
            sum.kl += l.kl;
            sum.total += l.total;
            steps += 1;
        }
        let s = 1.0 / steps as f64;
        curve.push(EpochLoss {
            epoch: epoch + 1,
            loss: LossBreakdown {
                occ: sum.occ * s,
                au: sum.au * s,
                ru: sum.ru * s,
                kl: sum.kl * s,
                total: sum.total * s,
            },
        });
    }
    Ok(curve)
}

/// Runs the trained network over every voxel of `batch` and returns a dump
/// with logits, depths, features and (for `hau`, `reliocc` and `mcd`)
/// uncertainties filled.
pub fn predict_dump(net: &ToyNet, batch: &VoxelBatch, mode: Mode, seed: u64) -> Result<VoxelBatch> {
    predict_dump_with_passes(net, batch, mode, seed, MCD_PASSES)
}

/// [`predict_dump`] with an explicit Monte-Carlo pass count for `mcd`.
pub fn predict_dump_with_passes(
    net: &ToyNet,
    batch: &VoxelBatch,
    mode: Mode,
    seed: u64,
    passes: usize,
) -> Result<VoxelBatch> {
    batch.validate()?;
    if batch.features.is_none() {
        return Err(Error::MissingField("features"));
    }
    if batch.feature_dim != net.feature_dim() || batch.width() != net.width() {
        return Err(Error::DimensionMismatch("batch shape vs network".into()));
    }
    let rows: Vec<Result<(Vec<f64>, Option<f64>)>> = par::map_range(batch.n(), |i| {
        let v = features_f64(batch, i)?;
        Ok(match mode {
            Mode::Mcd => {
                let samples = (0..passes)
                    .map(|k| net.forward(&v, net.dropout_masks(seed, &[rng::TAG_MCD, k as u64, i as u64])))
                    .collect::<Result<Vec<_>>>()?;
                let (mean, h) = uncert::mcd_aggregate(&samples)?;
                (mean, Some(h.max(MCD_SIGMA_FLOOR)))
            }
            Mode::Hau | Mode::ReliOcc => (net.forward(&v, None)?, Some(net.sigma(&v)?)),
            Mode::Baseline | Mode::Dul => (net.forward(&v, None)?, None),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = batch.clone();
    out.logits = rows.iter().flat_map(|(z, _)| z.iter().map(|&x| x as f32)).collect();
    out.sigmas = mode
        .has_sigma()
        .then(|| rows.iter().map(|(_, s)| s.unwrap() as f32).collect());
    Ok(out)
}
