//! Voxel batches, probability batches and the elementary probability maps.

use crate::error::{Error, Result};
use crate::par;

/// Label value marking a voxel as invalid; excluded from every metric and loss.
pub const IGNORE: u16 = u16::MAX;

/// Class index reserved for unoccupied voxels.
pub const EMPTY: u16 = 0;

/// Per-voxel predictions and annotations for `n` voxels over `num_classes + 1`
/// classes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBatch {
    /// Semantic class count S; logits have width S + 1.
    pub num_classes: usize,
    /// Feature width d, 0 when `features` is absent.
    pub feature_dim: usize,
    pub labels: Vec<u16>,
    pub logits: Vec<f32>,
    pub features: Option<Vec<f32>>,
    pub sigmas: Option<Vec<f32>>,
    pub depths: Option<Vec<f32>>,
}

impl VoxelBatch {
    /// Batch with zero logits and no optional fields.
    pub fn new(num_classes: usize, labels: Vec<u16>) -> Self {
        let n = labels.len();
        Self {
            num_classes,
            feature_dim: 0,
            labels,
            logits: vec![0.0; n * (num_classes + 1)],
            features: None,
            sigmas: None,
            depths: None,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Logit width S + 1.
    pub fn width(&self) -> usize {
        self.num_classes + 1
    }

    pub fn logit_row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.logits[i * w..(i + 1) * w]
    }

    pub fn logit_row_f64(&self, i: usize) -> Vec<f64> {
        self.logit_row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn feature_row(&self, i: usize) -> Option<&[f32]> {
        let d = self.feature_dim;
        self.features.as_ref().map(|f| &f[i * d..(i + 1) * d])
    }

    pub fn is_ignored(&self, i: usize) -> bool {
        self.labels[i] == IGNORE
    }

    /// Indices of voxels with a valid label.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_ignored(i)).collect()
    }

    /// Checks every structural invariant of the batch.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let w = self.width();
        if w > IGNORE as usize {
            return Err(Error::InvalidBatch(format!("too many classes ({})", self.num_classes)));
        }
        if self.logits.len() != n * w {
            return Err(Error::InvalidBatch(format!(
                "logits length {} != n * (S+1) = {}",
                self.logits.len(),
                n * w
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l != IGNORE && l as usize >= w) {
            return Err(Error::InvalidBatch(format!("label {bad} out of range for {w} classes")));
        }
        match &self.features {
            Some(f) if f.len() != n * self.feature_dim => {
                return Err(Error::InvalidBatch(format!(
                    "features length {} != n * d = {}",
                    f.len(),
                    n * self.feature_dim
                )))
            }
            None if self.feature_dim != 0 => {
                return Err(Error::InvalidBatch("feature_dim set without features".into()))
            }
            _ => {}
        }
        if let Some(s) = &self.sigmas {
            if s.len() != n {
                return Err(Error::InvalidBatch("sigmas length != n".into()));
            }
            if s.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::InvalidBatch("sigmas must be positive and finite".into()));
            }
        }
        if let Some(d) = &self.depths {
            if d.len() != n {
                return Err(Error::InvalidBatch("depths length != n".into()));
            }
            if d.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(Error::InvalidBatch("depths must be non-negative and finite".into()));
            }
        }
        Ok(())
    }
}

/// Per-voxel class distributions with the predicted label and its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    pub width: usize,
    pub probs: Vec<f64>,
    pub pred_label: Vec<u16>,
    pub confidence: Vec<f64>,
}

impl ProbBatch {
    pub fn n(&self) -> usize {
        self.pred_label.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.width..(i + 1) * self.width]
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax without the finiteness check; callers guarantee finite input.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in z.iter_mut() {
        *x /= sum;
    }
}

/// `log softmax(z)`, stable for large margins.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_f32(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax of every voxel's logits with argmax label and confidence.
pub fn predict(batch: &VoxelBatch) -> Result<ProbBatch> {
    let w = batch.width();
    if batch.logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let rows: Vec<(Vec<f64>, u16, f64)> = par::map_range(batch.n(), |i| {
        let mut p = batch.logit_row_f64(i);
        softmax_in_place(&mut p);
        let k = argmax(&p);
        let c = p[k];
        (p, k as u16, c)
    });
    Ok(assemble(w, rows))
}

pub(crate) fn assemble(width: usize, rows: Vec<(Vec<f64>, u16, f64)>) -> ProbBatch {
    let mut probs = Vec::with_capacity(rows.len() * width);
    let mut pred_label = Vec::with_capacity(rows.len());
    let mut confidence = Vec::with_capacity(rows.len());
    for (p, k, c) in rows {
        probs.extend_from_slice(&p);
        pred_label.push(k);
        confidence.push(c);
    }
    ProbBatch {
        width,
        probs,
        pred_label,
        confidence,
    }
}

/// Binary occupancy prediction and its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricView {
    pub pred_occupied: Vec<bool>,
    pub confidence: Vec<f64>,
}

/// Collapses a class distribution to empty vs occupied.
///
/// The confidence is `p_empty` for voxels predicted empty and `1 - p_empty`
/// otherwise, i.e. the probability the induced binary distribution gives to
/// the predicted binary label.
pub fn geometric_view(p: &ProbBatch) -> GeometricView {
    let (pred_occupied, confidence) = (0..p.n())
        .map(|i| {
            let p_empty = p.probs[i * p.width];
            let occupied = p.pred_label[i] != EMPTY;
            (occupied, if occupied { 1.0 - p_empty } else { p_empty })
        })
        .unzip();
    GeometricView {
        pred_occupied,
        confidence,
    }
}
