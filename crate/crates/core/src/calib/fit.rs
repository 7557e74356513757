use crate::error::{Error, Result};
use crate::nn::{Adam, MlpCache};
use crate::occ::{self, ProbBatch, VoxelBatch};
use crate::par;
use crate::rng;
use crate::uncert::{self, UncertaintyHead};

use super::{
    calibrate_row, floored_log_probs, top_entropy, Calibrator, CalibratorKind, CalibratorParams, FitLog, EPS_ALPHA,
    EPS_T,
};

/// Threshold grid for the entropy-gated kinds, as multiples of `ln(S + 1)`.
pub const ETA_GRID_FACTORS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];

/// Voxels per step for the ReliOcc scaler when no batch size is configured.
const RELIOCC_AUTO_BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Voxels per optimizer step. `None` selects the full split, except for
    /// the ReliOcc scaler which then samples 2048 voxels per step.
    pub batch_size: Option<usize>,
    /// Weights of the absolute, relative and calibration losses of the
    /// ReliOcc scaler.
    pub loss_weights: [f64; 3],
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 20,
            steps_per_epoch: 100,
            batch_size: None,
            loss_weights: [1.5, 1.0, 4.0],
            seed: 0,
        }
    }
}

/// Non-ignored voxels of a fitting split in `f64`.
struct FitData {
    width: usize,
    z: Vec<f64>,
    y: Vec<usize>,
    entropy: Vec<f64>,
    log_probs: Vec<f64>,
    depth: Vec<f64>,
    feat: Vec<f64>,
    feature_dim: usize,
    /// Row in the source batch, used to key noise streams.
    source: Vec<u64>,
}

impl FitData {
    fn new(batch: &VoxelBatch, kind: CalibratorKind) -> Result<Self> {
        batch.validate()?;
        let idx = batch.valid_indices();
        if idx.is_empty() {
            return Err(Error::EmptyEvaluationSet);
        }
        if batch.logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let width = batch.width();
        let depth = if kind == CalibratorKind::DeptS {
            let d = batch.depths.as_ref().ok_or(Error::MissingField("depths"))?;
            idx.iter().map(|&i| d[i] as f64).collect()
        } else {
            Vec::new()
        };
        let (feat, feature_dim) = if kind == CalibratorKind::ReliOcc {
            if batch.features.is_none() || batch.feature_dim == 0 {
                return Err(Error::MissingField("features"));
            }
            let f = idx
                .iter()
                .flat_map(|&i| batch.feature_row(i).unwrap().iter().map(|&x| x as f64))
                .collect();
            (f, batch.feature_dim)
        } else {
            (Vec::new(), 0)
        };
        let z: Vec<f64> = idx.iter().flat_map(|&i| batch.logit_row_f64(i)).collect();
        let gated = matches!(kind, CalibratorKind::MetaC | CalibratorKind::DeptS);
        let entropy = if gated {
            z.chunks(width).map(top_entropy).collect()
        } else {
            Vec::new()
        };
        let log_probs = if kind == CalibratorKind::DiriS {
            z.chunks(width).flat_map(floored_log_probs).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            width,
            y: idx.iter().map(|&i| batch.labels[i] as usize).collect(),
            source: idx.iter().map(|&i| i as u64).collect(),
            z,
            entropy,
            log_probs,
            depth,
            feat,
            feature_dim,
        })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn logits(&self, i: usize) -> &[f64] {
        &self.z[i * self.width..(i + 1) * self.width]
    }

    fn features(&self, i: usize) -> &[f64] {
        &self.feat[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// Unconstrained parameter vector of a calibrator; temperatures are stored
/// as their logarithms.
fn pack(c: &Calibrator) -> Vec<f64> {
    match c {
        Calibrator::TempS { temperature } | Calibrator::MetaC { temperature, .. } => vec![temperature.ln()],
        Calibrator::DiriS { weight, bias } => weight.iter().chain(bias).copied().collect(),
        Calibrator::DeptS { k1, k2, t1, t2, .. } => vec![*k1, *k2, t1.ln(), t2.ln()],
        Calibrator::ReliOcc {
            k1,
            k2,
            weight_diag,
            bias,
            head,
        } => [*k1, *k2]
            .iter()
            .chain(weight_diag)
            .chain(bias)
            .chain(&head.mlp.params)
            .copied()
            .collect(),
    }
}

fn unpack(template: &Calibrator, v: &[f64]) -> Calibrator {
    match template {
        Calibrator::TempS { .. } => Calibrator::TempS { temperature: v[0].exp() },
        Calibrator::MetaC { eta, .. } => Calibrator::MetaC {
            temperature: v[0].exp(),
            eta: *eta,
        },
        Calibrator::DiriS { bias, .. } => {
            let w = bias.len();
            Calibrator::DiriS {
                weight: v[..w * w].to_vec(),
                bias: v[w * w..].to_vec(),
            }
        }
        Calibrator::DeptS { eta, .. } => Calibrator::DeptS {
            k1: v[0],
            k2: v[1],
            t1: v[2].exp(),
            t2: v[3].exp(),
            eta: *eta,
        },
        Calibrator::ReliOcc { bias, head, .. } => {
            let w = bias.len();
            let mut head = head.clone();
            head.mlp.params.copy_from_slice(&v[2 + 2 * w..]);
            Calibrator::ReliOcc {
                k1: v[0],
                k2: v[1],
                weight_diag: v[2..2 + w].to_vec(),
                bias: v[2 + w..2 + 2 * w].to_vec(),
                head,
            }
        }
    }
}

impl CalibratorParams {
    /// Unconstrained parameter vector seen by the optimizer.
    pub fn packed(&self) -> Vec<f64> {
        pack(&self.calibrator)
    }

    /// Copy with the optimizer-space parameters replaced.
    pub fn with_packed(&self, v: &[f64]) -> Self {
        Self {
            width: self.width,
            calibrator: unpack(&self.calibrator, v),
            fit_log: self.fit_log.clone(),
        }
    }
}

/// NLL of voxel `i` under a closed-form calibrator, accumulating its gradient
/// (scaled by `scale`) into `grad`.
fn closed_form_term(c: &Calibrator, data: &FitData, i: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let z = data.logits(i);
    let y = data.y[i];
    let w = data.width;
    match c {
        Calibrator::TempS { temperature: t } | Calibrator::MetaC { temperature: t, .. } => {
            if let Calibrator::MetaC { eta, .. } = c {
                if data.entropy[i] >= *eta {
                    return (w as f64).ln();
                }
            }
            let u: Vec<f64> = z.iter().map(|x| x / t).collect();
            let (nll, g) = uncert::cross_entropy(&u, y);
            grad[0] -= scale * g.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            nll
        }
        Calibrator::DiriS { weight, bias } => {
            let q = &data.log_probs[i * w..(i + 1) * w];
            let u: Vec<f64> = (0..w)
                .map(|r| bias[r] + weight[r * w..(r + 1) * w].iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let (nll, g) = uncert::cross_entropy(&u, y);
            for r in 0..w {
                let gr = scale * g[r];
                for (gw, qc) in grad[r * w..(r + 1) * w].iter_mut().zip(q) {
                    *gw += gr * qc;
                }
                grad[w * w + r] += gr;
            }
            nll
        }
        Calibrator::DeptS { k1, k2, t1, t2, eta } => {
            let d = data.depth[i];
            let raw_alpha = k1 * d + k2;
            let alpha = raw_alpha.max(EPS_ALPHA);
            let (slot, tb) = if data.entropy[i] > *eta { (2, *t1) } else { (3, *t2) };
            let teff = alpha * tb;
            let u: Vec<f64> = z.iter().map(|x| x / teff).collect();
            let (nll, g) = uncert::cross_entropy(&u, y);
            // d nll / d teff
            let d_teff = -g.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / teff;
            grad[slot] += scale * d_teff * teff;
            if raw_alpha > EPS_ALPHA {
                let d_alpha = d_teff * tb;
                grad[0] += scale * d_alpha * d;
                grad[1] += scale * d_alpha;
            }
            nll
        }
        Calibrator::ReliOcc { .. } => unreachable!("handled by reliocc_objective"),
    }
}

/// Mean NLL and gradient of a closed-form calibrator over `idx`.
fn closed_form_objective(c: &Calibrator, data: &FitData, idx: &[usize]) -> (f64, Vec<f64>) {
    let np = pack(c).len();
    let scale = 1.0 / idx.len() as f64;
    let partials = par::map_chunks(idx, par::REDUCE_CHUNK, |_, chunk| {
        let mut g = vec![0.0; np];
        let l: f64 = chunk.iter().map(|&i| closed_form_term(c, data, i, scale, &mut g)).sum();
        (l, g)
    });
    let mut grad = vec![0.0; np];
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        par::accumulate_into(&mut grad, std::slice::from_ref(g));
    }
    (loss * scale, grad)
}

/// Per-voxel pieces of the ReliOcc scaler objective.
struct ReliOccVoxel {
    sigma: f64,
    cache: MlpCache,
}

/// Weighted absolute + relative + calibration objective of the ReliOcc scaler.
///
/// Mixed logits of a pair are `lambda z_i + (1 - lambda) z_j`: for a linear
/// completion head this equals the head applied to the mixed feature.
#[allow(clippy::too_many_arguments)]
fn reliocc_objective(
    c: &Calibrator,
    data: &FitData,
    idx: &[usize],
    weights: [f64; 3],
    seed: u64,
    step: u64,
) -> (f64, [f64; 3], Vec<f64>) {
    let Calibrator::ReliOcc {
        k1,
        k2,
        weight_diag,
        bias,
        head,
    } = c
    else {
        unreachable!()
    };
    let w = data.width;
    let np = 2 + 2 * w + head.num_params();
    let b = idx.len();
    let inv = 1.0 / b as f64;
    let [wa, wr, wc] = weights;

    let voxels: Vec<ReliOccVoxel> = par::map_range(b, |k| {
        let (s, cache) = head.forward(data.features(idx[k]));
        ReliOccVoxel { sigma: s[0], cache }
    });

    // calibration and absolute terms, per voxel
    struct Part {
        calib: f64,
        abs: f64,
        grad: Vec<f64>,
        d_sigma: Vec<f64>,
    }
    let order: Vec<usize> = (0..b).collect();
    let parts = par::map_chunks(&order, par::REDUCE_CHUNK, |_, chunk| {
        let mut p = Part {
            calib: 0.0,
            abs: 0.0,
            grad: vec![0.0; 2 + 2 * w],
            d_sigma: vec![0.0; chunk.len()],
        };
        for (slot, &k) in chunk.iter().enumerate() {
            let i = idx[k];
            let z = data.logits(i);
            let y = data.y[i];
            let s = voxels[k].sigma;

            let raw_t = k1 * s + k2;
            let t = raw_t.max(EPS_T);
            let a: Vec<f64> = (0..w).map(|m| weight_diag[m] * z[m] + bias[m]).collect();
            let u: Vec<f64> = a.iter().map(|x| x / t).collect();
            let (nll, g) = uncert::cross_entropy(&u, y);
            p.calib += nll;
            let gc = wc * inv;
            for m in 0..w {
                p.grad[2 + m] += gc * g[m] * z[m] / t;
                p.grad[2 + w + m] += gc * g[m] / t;
            }
            let d_t = -g.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() / (t * t);
            if raw_t > EPS_T {
                p.grad[0] += gc * d_t * s;
                p.grad[1] += gc * d_t;
                p.d_sigma[slot] += gc * d_t * k1;
            }

            let eps = rng::normal_vec(seed, &[rng::TAG_LOGIT_NOISE, step, data.source[i]], w);
            let sampled: Vec<f64> = z.iter().zip(&eps).map(|(x, e)| x + s * e).collect();
            let (ce, g) = uncert::cross_entropy(&sampled, y);
            p.abs += ce;
            p.d_sigma[slot] += wa * inv * g.iter().zip(&eps).map(|(x, e)| x * e).sum::<f64>();
        }
        p
    });
    let mut grad = vec![0.0; np];
    let mut d_sigma = Vec::with_capacity(b);
    let (mut l_calib, mut l_abs) = (0.0, 0.0);
    for p in parts {
        l_calib += p.calib;
        l_abs += p.abs;
        par::accumulate_into(&mut grad[..2 + 2 * w], std::slice::from_ref(&p.grad));
        d_sigma.extend(p.d_sigma);
    }

    // relative term over seeded pairs within the step's voxels
    let mut l_rel = 0.0;
    if b >= 2 {
        let perm = rng::permutation(seed, &[rng::TAG_PAIRS, step], b);
        for k in 0..b {
            let j = perm[k];
            let (si, sj) = (voxels[k].sigma, voxels[j].sigma);
            let lambda = uncert::mixing_weight(si, sj);
            let (zi, zj) = (data.logits(idx[k]), data.logits(idx[j]));
            let mixed: Vec<f64> = zi.iter().zip(zj).map(|(a, c)| lambda * a + (1.0 - lambda) * c).collect();
            let mut target = vec![0.0; w];
            target[data.y[idx[k]]] += 1.0;
            target[data.y[idx[j]]] += 1.0;
            let (l, g) = uncert::loss_relative(&mixed, &target);
            l_rel += l;
            let d_lambda: f64 = g.iter().zip(zi.iter().zip(zj)).map(|(gm, (a, c))| gm * (a - c)).sum();
            let (dli, dlj) = uncert::mixing_weight_grad(si, sj);
            d_sigma[k] += wr * inv * d_lambda * dli;
            d_sigma[j] += wr * inv * d_lambda * dlj;
        }
    }

    let head_partials = par::map_chunks(&order, par::REDUCE_CHUNK, |_, chunk| {
        let mut g = vec![0.0; head.num_params()];
        for &k in chunk {
            if d_sigma[k] != 0.0 {
                head.backward(&voxels[k].cache, &[d_sigma[k]], &mut g, None);
            }
        }
        g
    });
    par::accumulate_into(&mut grad[2 + 2 * w..], &head_partials);

    let terms = [l_abs * inv, l_rel * inv, l_calib * inv];
    let total = wa * terms[0] + wr * terms[1] + wc * terms[2];
    (total, terms, grad)
}

/// Minibatch rows for `step`: a window of the epoch's seeded permutation, or
/// every row in order when the batch covers the split.
fn step_indices(m: usize, batch: usize, seed: u64, epoch: usize, step_in_epoch: usize) -> Vec<usize> {
    if batch >= m {
        return (0..m).collect();
    }
    let perm = rng::permutation(seed, &[rng::TAG_CALIB, epoch as u64], m);
    (0..batch).map(|k| perm[(step_in_epoch * batch + k) % m]).collect()
}

fn effective_batch(kind: CalibratorKind, config: &FitConfig, m: usize) -> usize {
    match (config.batch_size, kind) {
        (Some(b), _) => b.clamp(1, m),
        (None, CalibratorKind::ReliOcc) => RELIOCC_AUTO_BATCH.min(m),
        (None, _) => m,
    }
}

/// Objective and gradient (in packed-parameter space) that the optimizer sees
/// at global step `step` of epoch 0.
pub fn objective_and_grad(
    params: &CalibratorParams,
    batch: &VoxelBatch,
    config: &FitConfig,
    step: u64,
) -> Result<(f64, Vec<f64>)> {
    let data = FitData::new(batch, params.kind())?;
    let b = effective_batch(params.kind(), config, data.len());
    let idx = step_indices(data.len(), b, config.seed, 0, step as usize);
    Ok(objective(&params.calibrator, &data, &idx, config, step))
}

fn objective(c: &Calibrator, data: &FitData, idx: &[usize], config: &FitConfig, step: u64) -> (f64, Vec<f64>) {
    match c {
        Calibrator::ReliOcc { .. } => {
            let (total, _, g) = reliocc_objective(c, data, idx, config.loss_weights, config.seed, step);
            (total, g)
        }
        _ => closed_form_objective(c, data, idx),
    }
}

/// Calibrated NLL over the whole split.
fn split_nll(c: &Calibrator, data: &FitData) -> f64 {
    let all: Vec<usize> = (0..data.len()).collect();
    match c {
        Calibrator::ReliOcc {
            k1,
            k2,
            weight_diag,
            bias,
            head,
        } => {
            let losses = par::map_chunks(&all, par::REDUCE_CHUNK, |_, chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let s = head.sigma(data.features(i))[0];
                        let p = super::reliocc_scale(data.logits(i), s, *k1, *k2, weight_diag, bias);
                        -p[data.y[i]].max(f64::MIN_POSITIVE).ln()
                    })
                    .sum::<f64>()
            });
            losses.iter().sum::<f64>() / data.len() as f64
        }
        _ => closed_form_objective(c, data, &all).0,
    }
}

/// Runs the optimizer from `init` for the configured budget.
fn optimize(init: Calibrator, data: &FitData, config: &FitConfig, kind: CalibratorKind) -> Result<(Calibrator, FitLog)> {
    let mut v = pack(&init);
    let mut opt = Adam::with_decay(v.len(), config.lr, config.weight_decay);
    let b = effective_batch(kind, config, data.len());
    let mut epoch_nll = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        for s in 0..config.steps_per_epoch {
            let idx = step_indices(data.len(), b, config.seed, epoch, s);
            let current = unpack(&init, &v);
            let (loss, grad) = objective(&current, data, &idx, config, step);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: step as usize,
                    what: "objective",
                });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    iteration: step as usize,
                    what: "gradient",
                });
            }
            opt.step(&mut v, &grad);
            step += 1;
        }
        let nll = split_nll(&unpack(&init, &v), data);
        if !nll.is_finite() {
            return Err(Error::Divergence {
                iteration: step as usize,
                what: "NLL",
            });
        }
        epoch_nll.push(nll);
    }
    let fitted = unpack(&init, &v);
    let final_nll = epoch_nll.last().copied().unwrap_or_else(|| split_nll(&fitted, data));
    Ok((
        fitted,
        FitLog {
            final_nll,
            iterations: step as usize,
            epoch_nll,
            selected_eta: None,
        },
    ))
}

/// Fits a calibrator of `kind` by minimizing the calibrated NLL of the
/// non-ignored voxels of `val` (for the ReliOcc scaler, the weighted sum of
/// absolute, relative and calibration losses).
///
/// Gated kinds pick their entropy threshold from
/// `ETA_GRID_FACTORS * ln(S + 1)` by the final split NLL.
pub fn fit_calibrator(kind: CalibratorKind, val: &VoxelBatch, config: &FitConfig) -> Result<CalibratorParams> {
    let data = FitData::new(val, kind)?;
    let width = data.width;
    let base = CalibratorParams::identity(kind, width, data.feature_dim.max(1), config.seed);
    let inits: Vec<Calibrator> = match kind {
        CalibratorKind::MetaC | CalibratorKind::DeptS => ETA_GRID_FACTORS
            .iter()
            .map(|f| {
                let eta = f * (width as f64).ln();
                match kind {
                    CalibratorKind::MetaC => Calibrator::MetaC { temperature: 1.0, eta },
                    _ => Calibrator::DeptS {
                        k1: 0.0,
                        k2: 1.0,
                        t1: 1.5,
                        t2: 1.0,
                        eta,
                    },
                }
            })
            .collect(),
        _ => vec![base.calibrator.clone()],
    };
    let mut best: Option<(Calibrator, FitLog)> = None;
    for init in inits {
        let (cal, log) = optimize(init, &data, config, kind)?;
        if best.as_ref().is_none_or(|(_, b)| log.final_nll < b.final_nll) {
            best = Some((cal, log));
        }
    }
    let (calibrator, mut fit_log) = best.expect("at least one candidate");
    fit_log.selected_eta = match calibrator {
        Calibrator::MetaC { eta, .. } | Calibrator::DeptS { eta, .. } => Some(eta),
        _ => None,
    };
    Ok(CalibratorParams {
        width,
        calibrator,
        fit_log,
    })
}

/// Calibrated probabilities of every voxel. The predicted label is the raw
/// argmax; confidence is the calibrated probability of that label.
pub fn apply_calibrator(params: &CalibratorParams, batch: &VoxelBatch) -> Result<ProbBatch> {
    batch.validate()?;
    params.check()?;
    if batch.width() != params.width {
        return Err(Error::DimensionMismatch(format!(
            "calibrator has {} classes, batch has {}",
            params.width,
            batch.width()
        )));
    }
    if batch.logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let head: Option<&UncertaintyHead> = match &params.calibrator {
        Calibrator::ReliOcc { head, .. } => {
            if batch.features.is_none() {
                return Err(Error::MissingField("features"));
            }
            if head.mlp.input_dim() != batch.feature_dim {
                return Err(Error::DimensionMismatch("uncertainty head input vs feature width".into()));
            }
            Some(head)
        }
        Calibrator::DeptS { .. } if batch.depths.is_none() => return Err(Error::MissingField("depths")),
        _ => None,
    };
    let rows: Vec<Result<(Vec<f64>, u16, f64)>> = par::map_range(batch.n(), |i| {
        let z = batch.logit_row_f64(i);
        let k = occ::argmax(&z);
        let depth = batch.depths.as_ref().map(|d| d[i] as f64);
        let sigma = head.map(|h| {
            let v: Vec<f64> = batch.feature_row(i).unwrap().iter().map(|&x| x as f64).collect();
            h.sigma(&v)[0]
        });
        let p = calibrate_row(params, &z, depth, sigma)?;
        let c = p[k];
        Ok((p, k as u16, c))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(occ::assemble(params.width, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logits with labels drawn from their own softmax.
    pub(crate) fn self_consistent(n: usize, width: usize, scale: f32, seed: u64) -> VoxelBatch {
        use rand::Rng as _;
        let mut r = rng::stream(seed, &[99]);
        let mut b = VoxelBatch::new(width - 1, vec![0; n]);
        for i in 0..n {
            let z: Vec<f64> = (0..width).map(|_| 2.0 * rng::normal(&mut r)).collect();
            let p = occ::softmax(&z).unwrap();
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut y = width - 1;
            for (c, pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    y = c;
                    break;
                }
            }
            b.labels[i] = y as u16;
            for c in 0..width {
                b.logits[i * width + c] = scale * z[c] as f32;
            }
        }
        b
    }

    #[test]
    fn temps_never_changes_labels() {
        let b = self_consistent(500, 4, 3.0, 1);
        let cfg = FitConfig {
            epochs: 2,
            steps_per_epoch: 20,
            ..FitConfig::default()
        };
        let p = fit_calibrator(CalibratorKind::TempS, &b, &cfg).unwrap();
        let raw = occ::predict(&b).unwrap();
        let cal = apply_calibrator(&p, &b).unwrap();
        assert_eq!(raw.pred_label, cal.pred_label);
    }

    #[test]
    fn identity_parameters_leave_confidence_unchanged() {
        let mut b = self_consistent(200, 5, 1.0, 2);
        b.feature_dim = 3;
        b.features = Some((0..600).map(|k| (k as f32 * 0.37).sin()).collect());
        b.depths = Some((0..200).map(|k| k as f32 * 0.1).collect());
        let raw = occ::predict(&b).unwrap();
        for kind in CalibratorKind::ALL {
            let p = CalibratorParams::identity(kind, 5, 3, 0);
            let cal = apply_calibrator(&p, &b).unwrap();
            for (a, c) in raw.confidence.iter().zip(&cal.confidence) {
                assert!((a - c).abs() < 1e-12, "{kind}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn missing_fields_are_reported() {
        let b = self_consistent(50, 3, 1.0, 3);
        let cfg = FitConfig::default();
        assert!(matches!(
            fit_calibrator(CalibratorKind::DeptS, &b, &cfg),
            Err(Error::MissingField("depths"))
        ));
        assert!(matches!(
            fit_calibrator(CalibratorKind::ReliOcc, &b, &cfg),
            Err(Error::MissingField("features"))
        ));
        let p = CalibratorParams::identity(CalibratorKind::DeptS, 3, 1, 0);
        assert!(matches!(apply_calibrator(&p, &b), Err(Error::MissingField("depths"))));
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let mut b = self_consistent(50, 3, 1.0, 4);
        b.logits[0] = 1e30;
        let cfg = FitConfig {
            lr: 50.0,
            epochs: 3,
            steps_per_epoch: 5,
            ..FitConfig::default()
        };
        match fit_calibrator(CalibratorKind::DiriS, &b, &cfg) {
            Err(Error::Divergence { .. }) | Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
