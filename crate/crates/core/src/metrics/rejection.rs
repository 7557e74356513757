use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized error of retained samples as a function of rejection rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    /// `(rejection_rate, normalized_error)` at every tie-block boundary.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Area under the curve of a uniformly random ranking on the normalized axis.
pub const AUC_RANDOM: f64 = 0.5;

/// Rejects the most uncertain samples first.
///
/// Samples sharing an uncertainty value are rejected as one block; the curve
/// is linear between block boundaries, which equals the expectation over
/// random tie-breaking. The error axis is divided by the base error so the
/// curve starts at 1.
pub fn rejection_curve(uncertainties: &[f64], correct: &[bool]) -> Result<RejectionCurve> {
    let n = uncertainties.len();
    if n == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    if correct.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} uncertainties vs {} flags", correct.len())));
    }
    if uncertainties.iter().any(|u| u.is_nan()) {
        return Err(Error::NonFinite("uncertainties"));
    }
    let total_errors = correct.iter().filter(|&&c| !c).count();
    if total_errors == 0 {
        return Err(Error::ZeroBaseError);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[b].total_cmp(&uncertainties[a]));

    let nf = n as f64;
    let ef = total_errors as f64;
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 1.0));
    let (mut rejected, mut rejected_errors) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        let u = uncertainties[order[i]];
        while i < n && uncertainties[order[i]] == u {
            rejected += 1;
            rejected_errors += !correct[order[i]] as usize;
            i += 1;
        }
        points.push((rejected as f64 / nf, (total_errors - rejected_errors) as f64 / ef));
    }
    let auc = trapezoid(&points);
    Ok(RejectionCurve { points, auc })
}

/// Trapezoid rule over points in the given order.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Curve of the ranking that rejects every error before any correct sample.
pub fn oracle_curve(correct: &[bool]) -> Result<RejectionCurve> {
    let u: Vec<f64> = correct.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
    rejection_curve(&u, correct)
}

/// Prediction rejection ratio
/// `(AUC_random - AUC_uncertainty) / (AUC_random - AUC_oracle)`.
pub fn prr(uncertainties: &[f64], correct: &[bool]) -> Result<f64> {
    prr_with_curves(uncertainties, correct).map(|(p, _, _)| p)
}

/// PRR together with the model and oracle curves it was computed from.
pub fn prr_with_curves(
    uncertainties: &[f64],
    correct: &[bool],
) -> Result<(f64, RejectionCurve, RejectionCurve)> {
    let curve = rejection_curve(uncertainties, correct)?;
    if correct.iter().all(|&c| !c) {
        return Err(Error::AllErrors);
    }
    let oracle = oracle_curve(correct)?;
    let p = (AUC_RANDOM - curve.auc) / (AUC_RANDOM - oracle.auc);
    Ok((p, curve, oracle))
}
