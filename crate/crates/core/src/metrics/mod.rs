//! Accuracy and reliability metrics for the semantic and geometric views.

mod accuracy;
mod calibration;
mod rejection;

pub use accuracy::{iou_binary, miou_semantic};
pub use calibration::{bin_index, ece, ece_from_bins, reliability_diagram, BinStats, DEFAULT_BINS};
pub use rejection::{oracle_curve, prr, prr_with_curves, rejection_curve, trapezoid, RejectionCurve, AUC_RANDOM};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occ::{self, ProbBatch, VoxelBatch, EMPTY, IGNORE};

/// Which per-voxel quantity ranks voxels for the rejection curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncertaintySource {
    /// `1 - confidence` of the respective view.
    OneMinusConfidence,
    /// The batch's `sigmas` field, shared by both views.
    ExplicitSigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub num_bins: usize,
    /// Restrict semantic ECE/PRR to voxels whose ground truth is occupied.
    pub semantic_occupied_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            num_bins: DEFAULT_BINS,
            semantic_occupied_only: false,
        }
    }
}

/// Reliability view of one prediction type: calibration bins and rejection curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub ece: f64,
    /// `None` when PRR is undefined (no errors, or only errors).
    pub prr: Option<f64>,
    pub diagram: Vec<BinStats>,
    pub rejection: Option<RejectionCurve>,
    pub oracle: Option<RejectionCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_evaluated: usize,
    pub iou: f64,
    pub miou: f64,
    /// IoU of classes `1..=S`; `None` for classes absent from prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub semantic: ViewReport,
    pub geometric: ViewReport,
}

/// Per-sample inputs of a reliability view.
#[derive(Debug, Clone, Default)]
pub(crate) struct ViewSamples {
    pub confidence: Vec<f64>,
    pub correct: Vec<bool>,
    pub uncertainty: Vec<f64>,
}

pub(crate) fn view_report(s: &ViewSamples, num_bins: usize) -> Result<ViewReport> {
    let diagram = reliability_diagram(&s.confidence, &s.correct, num_bins)?;
    let ece = ece_from_bins(&diagram);
    let (prr, rejection, oracle) = match prr_with_curves(&s.uncertainty, &s.correct) {
        Ok((p, c, o)) => (Some(p), Some(c), Some(o)),
        Err(Error::ZeroBaseError | Error::AllErrors) => (None, None, None),
        Err(e) => return Err(e),
    };
    Ok(ViewReport {
        ece,
        prr,
        diagram,
        rejection,
        oracle,
    })
}

/// Evaluates the raw softmax predictions of a batch.
pub fn evaluate(batch: &VoxelBatch, source: UncertaintySource, opts: &EvalOptions) -> Result<MetricReport> {
    batch.validate()?;
    let probs = occ::predict(batch)?;
    let sigma = explicit_sigma(batch, source)?;
    evaluate_probs(&probs, &batch.labels, batch.num_classes, sigma.as_deref(), opts)
}

pub(crate) fn explicit_sigma(batch: &VoxelBatch, source: UncertaintySource) -> Result<Option<Vec<f64>>> {
    match source {
        UncertaintySource::OneMinusConfidence => Ok(None),
        UncertaintySource::ExplicitSigma => batch
            .sigmas
            .as_ref()
            .map(|s| Some(s.iter().map(|&x| x as f64).collect()))
            .ok_or(Error::MissingField("sigmas")),
    }
}

/// Evaluates an arbitrary probability batch against `labels`.
///
/// `sigma`, when given, replaces `1 - confidence` as the ranking uncertainty
/// of both views.
pub fn evaluate_probs(
    probs: &ProbBatch,
    labels: &[u16],
    num_classes: usize,
    sigma: Option<&[f64]>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let n = labels.len();
    if probs.n() != n || sigma.is_some_and(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("prediction and label counts differ".into()));
    }
    let geo = occ::geometric_view(probs);
    let valid: Vec<bool> = labels.iter().map(|&l| l != IGNORE).collect();
    let gt_occupied: Vec<bool> = labels.iter().map(|&l| l != EMPTY && l != IGNORE).collect();

    let iou = iou_binary(&geo.pred_occupied, &gt_occupied, &valid)?;
    let (per_class_iou, miou) = miou_semantic(&probs.pred_label, labels, num_classes, &valid)?;

    let mut sem = ViewSamples::default();
    let mut g = ViewSamples::default();
    for i in (0..n).filter(|&i| valid[i]) {
        let sem_conf = probs.confidence[i];
        let geo_conf = geo.confidence[i];
        if !opts.semantic_occupied_only || gt_occupied[i] {
            sem.confidence.push(sem_conf);
            sem.correct.push(probs.pred_label[i] == labels[i]);
            sem.uncertainty.push(sigma.map_or(1.0 - sem_conf, |s| s[i]));
        }
        g.confidence.push(geo_conf);
        g.correct.push(geo.pred_occupied[i] == gt_occupied[i]);
        g.uncertainty.push(sigma.map_or(1.0 - geo_conf, |s| s[i]));
    }

    Ok(MetricReport {
        n_evaluated: g.correct.len(),
        iou,
        miou,
        per_class_iou,
        semantic: view_report(&sem, opts.num_bins)?,
        geometric: view_report(&g, opts.num_bins)?,
    })
}

impl MetricReport {
    /// Flat `(name, value)` rows; `None` marks an undefined metric.
    pub fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("n_evaluated".to_string(), Some(self.n_evaluated as f64)),
            ("iou".to_string(), Some(self.iou)),
            ("miou".to_string(), Some(self.miou)),
            ("ece_sem".to_string(), Some(self.semantic.ece)),
            ("prr_sem".to_string(), self.semantic.prr),
            ("ece_geo".to_string(), Some(self.geometric.ece)),
            ("prr_geo".to_string(), self.geometric.prr),
        ];
        for (c, v) in self.per_class_iou.iter().enumerate() {
            rows.push((format!("iou_class_{}", c + 1), *v));
        }
        rows
    }
}
