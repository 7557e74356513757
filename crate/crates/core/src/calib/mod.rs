//! Post-hoc scaling calibrators.
//!
//! Every calibrator remaps confidence only: the predicted label is always the
//! argmax of the raw logits, so accuracy metrics are unchanged by calibration.

mod file;
mod fit;

pub use file::{params_from_str, params_to_string, read_params, write_params};
pub use fit::{apply_calibrator, fit_calibrator, objective_and_grad, FitConfig, ETA_GRID_FACTORS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occ::softmax_in_place;
use crate::uncert::UncertaintyHead;

/// Floor applied to probabilities before taking logs.
pub const EPS_LOG: f64 = 1e-12;
/// Floor of the depth-dependent temperature multiplier.
pub const EPS_ALPHA: f64 = 1e-3;
/// Floor of the uncertainty-dependent temperature.
pub const EPS_T: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CalibratorKind {
    /// Single shared temperature.
    TempS,
    /// Full matrix on log-probabilities plus bias.
    DiriS,
    /// Entropy-gated temperature with a constant fallback.
    MetaC,
    /// Entropy-gated pair of temperatures scaled linearly by depth.
    DeptS,
    /// Diagonal affine map divided by a temperature linear in the learned uncertainty.
    ReliOcc,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 5] = [
        CalibratorKind::TempS,
        CalibratorKind::DiriS,
        CalibratorKind::MetaC,
        CalibratorKind::DeptS,
        CalibratorKind::ReliOcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalibratorKind::TempS => "temps",
            CalibratorKind::DiriS => "diris",
            CalibratorKind::MetaC => "metac",
            CalibratorKind::DeptS => "depts",
            CalibratorKind::ReliOcc => "reliocc",
        }
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown calibrator kind {s:?}")))
    }
}

/// Learnable parameters of one calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    TempS {
        temperature: f64,
    },
    DiriS {
        /// `(S+1) x (S+1)`, row-major.
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    MetaC {
        temperature: f64,
        eta: f64,
    },
    DeptS {
        k1: f64,
        k2: f64,
        t1: f64,
        t2: f64,
        eta: f64,
    },
    ReliOcc {
        k1: f64,
        k2: f64,
        /// Diagonal of W; off-diagonal entries are fixed at zero.
        weight_diag: Vec<f64>,
        bias: Vec<f64>,
        head: UncertaintyHead,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitLog {
    pub final_nll: f64,
    pub iterations: usize,
    /// Calibrated NLL on the fitting split after each epoch.
    pub epoch_nll: Vec<f64>,
    /// Threshold chosen by grid search, for gated kinds.
    pub selected_eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratorParams {
    /// Class count S + 1.
    pub width: usize,
    pub calibrator: Calibrator,
    pub fit_log: FitLog,
}

impl CalibratorParams {
    pub fn kind(&self) -> CalibratorKind {
        match self.calibrator {
            Calibrator::TempS { .. } => CalibratorKind::TempS,
            Calibrator::DiriS { .. } => CalibratorKind::DiriS,
            Calibrator::MetaC { .. } => CalibratorKind::MetaC,
            Calibrator::DeptS { .. } => CalibratorKind::DeptS,
            Calibrator::ReliOcc { .. } => CalibratorKind::ReliOcc,
        }
    }

    /// Parameters that leave every distribution equal to the plain softmax
    /// (for MetaC, as long as every voxel takes the temperature branch).
    pub fn identity(kind: CalibratorKind, width: usize, feature_dim: usize, seed: u64) -> Self {
        let eye = |w: usize| {
            let mut m = vec![0.0; w * w];
            for i in 0..w {
                m[i * w + i] = 1.0;
            }
            m
        };
        let calibrator = match kind {
            CalibratorKind::TempS => Calibrator::TempS { temperature: 1.0 },
            CalibratorKind::DiriS => Calibrator::DiriS {
                weight: eye(width),
                bias: vec![0.0; width],
            },
            CalibratorKind::MetaC => Calibrator::MetaC {
                temperature: 1.0,
                eta: f64::INFINITY,
            },
            CalibratorKind::DeptS => Calibrator::DeptS {
                k1: 0.0,
                k2: 1.0,
                t1: 1.0,
                t2: 1.0,
                eta: f64::INFINITY,
            },
            CalibratorKind::ReliOcc => Calibrator::ReliOcc {
                k1: 0.0,
                k2: 1.0,
                weight_diag: vec![1.0; width],
                bias: vec![0.0; width],
                head: UncertaintyHead::new(feature_dim, 1, seed, &[crate::rng::TAG_CALIB]),
            },
        };
        Self {
            width,
            calibrator,
            fit_log: FitLog::default(),
        }
    }

    fn check(&self) -> Result<()> {
        let w = self.width;
        let positive = |name: &str, t: f64| {
            if t > 0.0 && t.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {t}")))
            }
        };
        match &self.calibrator {
            Calibrator::TempS { temperature } | Calibrator::MetaC { temperature, .. } => {
                positive("temperature", *temperature)
            }
            Calibrator::DeptS { t1, t2, .. } => positive("t1", *t1).and(positive("t2", *t2)),
            Calibrator::DiriS { weight, bias } if weight.len() != w * w || bias.len() != w => {
                Err(Error::DimensionMismatch("Dirichlet parameters".into()))
            }
            Calibrator::ReliOcc { weight_diag, bias, .. } if weight_diag.len() != w || bias.len() != w => {
                Err(Error::DimensionMismatch("ReliOcc scaler parameters".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `-c ln c` of the top softmax probability `c`.
pub fn top_entropy(z: &[f64]) -> f64 {
    let mut p = z.to_vec();
    softmax_in_place(&mut p);
    let c = p.iter().copied().fold(0.0, f64::max);
    if c > 0.0 {
        -c * c.ln()
    } else {
        0.0
    }
}

fn scaled_softmax(z: &[f64], divisor: f64) -> Vec<f64> {
    let mut p: Vec<f64> = z.iter().map(|x| x / divisor).collect();
    softmax_in_place(&mut p);
    p
}

/// `softmax(z / T)`.
pub fn temp_scale(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    Ok(scaled_softmax(z, temperature))
}

/// `log(max(softmax(z), EPS_LOG))`.
pub fn floored_log_probs(z: &[f64]) -> Vec<f64> {
    let mut p = z.to_vec();
    softmax_in_place(&mut p);
    p.iter().map(|x| x.max(EPS_LOG).ln()).collect()
}

/// `softmax(W log softmax(z) + b)` with `W` row-major.
pub fn diri_scale(z: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let w = z.len();
    if weight.len() != w * w || bias.len() != w {
        return Err(Error::DimensionMismatch(format!(
            "expected {w}x{w} weight and {w} bias, got {} and {}",
            weight.len(),
            bias.len()
        )));
    }
    let q = floored_log_probs(z);
    let mut u: Vec<f64> = (0..w)
        .map(|r| bias[r] + weight[r * w..(r + 1) * w].iter().zip(&q).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    softmax_in_place(&mut u);
    Ok(u)
}

/// Full distribution of the entropy-gated calibrator: `softmax(z / T)` when
/// `-c ln c < eta`, otherwise uniform.
pub fn meta_distribution(z: &[f64], temperature: f64, eta: f64) -> Vec<f64> {
    if top_entropy(z) < eta {
        scaled_softmax(z, temperature)
    } else {
        vec![1.0 / z.len() as f64; z.len()]
    }
}

/// Confidence of the entropy-gated calibrator.
pub fn meta_scale(z: &[f64], temperature: f64, eta: f64) -> f64 {
    meta_distribution(z, temperature, eta)
        .into_iter()
        .fold(0.0, f64::max)
}

/// `max(k1 * depth + k2, EPS_ALPHA)`.
pub fn depth_multiplier(depth: f64, k1: f64, k2: f64) -> f64 {
    (k1 * depth + k2).max(EPS_ALPHA)
}

/// `softmax(z / (alpha T1))` when `-c ln c > eta`, else `softmax(z / (alpha T2))`.
pub fn depts_scale(z: &[f64], depth: f64, k1: f64, k2: f64, t1: f64, t2: f64, eta: f64) -> Vec<f64> {
    let alpha = depth_multiplier(depth, k1, k2);
    let t = if top_entropy(z) > eta { t1 } else { t2 };
    scaled_softmax(z, alpha * t)
}

/// `max(k1 * sigma + k2, EPS_T)`.
pub fn sigma_temperature(sigma: f64, k1: f64, k2: f64) -> f64 {
    (k1 * sigma + k2).max(EPS_T)
}

/// `softmax((diag(W) z + b) / T_sigma)`.
pub fn reliocc_scale(z: &[f64], sigma: f64, k1: f64, k2: f64, weight_diag: &[f64], bias: &[f64]) -> Vec<f64> {
    let t = sigma_temperature(sigma, k1, k2);
    let mut u: Vec<f64> = z
        .iter()
        .zip(weight_diag)
        .zip(bias)
        .map(|((x, w), b)| (w * x + b) / t)
        .collect();
    softmax_in_place(&mut u);
    u
}

/// Calibrated distribution of one voxel.
pub(crate) fn calibrate_row(
    params: &CalibratorParams,
    z: &[f64],
    depth: Option<f64>,
    sigma: Option<f64>,
) -> Result<Vec<f64>> {
    Ok(match &params.calibrator {
        Calibrator::TempS { temperature } => temp_scale(z, *temperature)?,
        Calibrator::DiriS { weight, bias } => diri_scale(z, weight, bias)?,
        Calibrator::MetaC { temperature, eta } => meta_distribution(z, *temperature, *eta),
        Calibrator::DeptS { k1, k2, t1, t2, eta } => {
            let d = depth.ok_or(Error::MissingField("depths"))?;
            depts_scale(z, d, *k1, *k2, *t1, *t2, *eta)
        }
        Calibrator::ReliOcc {
            k1,
            k2,
            weight_diag,
            bias,
            ..
        } => {
            let s = sigma.ok_or(Error::MissingField("sigmas"))?;
            reliocc_scale(z, s, *k1, *k2, weight_diag, bias)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn temp_scale_examples() {
        let z = [0.3, -1.0, 2.0];
        assert_eq!(temp_scale(&z, 1.0).unwrap(), occ::softmax(&z).unwrap());
        let p = temp_scale(&[2.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.268941, epsilon = 1e-6);
        let p = temp_scale(&[5.0, -3.0, 1.0, 0.0], 1e6).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-3));
        assert!(temp_scale(&z, 0.0).is_err());
        assert!(temp_scale(&z, -2.0).is_err());
    }

    #[test]
    fn diri_scale_examples() {
        let z = [0.4, -0.2, 1.3];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let p = diri_scale(&z, &eye, &[0.0; 3]).unwrap();
        let s = occ::softmax(&z).unwrap();
        for (a, b) in p.iter().zip(&s) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let p = diri_scale(&[2f64.ln(), 0.0], &[2.0, 0.0, 0.0, 2.0], &[0.0; 2]).unwrap();
        assert_abs_diff_eq!(p[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.2, epsilon = 1e-12);
        assert!(diri_scale(&z, &eye[..4], &[0.0; 3]).is_err());
    }

    #[test]
    fn meta_scale_examples() {
        // c ~ 1: entropy term ~ 0, temperature branch
        let z = [30.0, 0.0, 0.0];
        assert_eq!(meta_scale(&z, 2.0, 0.1), temp_scale(&z, 2.0).unwrap()[0]);
        let z = [0.1, 0.0, 0.05];
        assert_eq!(meta_scale(&z, 2.0, 0.01), 1.0 / 3.0);
        let z = vec![0.0; 20];
        assert_eq!(meta_scale(&z, 1.0, 0.0), 0.05);
    }

    #[test]
    fn depts_examples() {
        let z = [1.0, -0.5, 0.2];
        let p = depts_scale(&z, 7.0, 0.0, 1.0, 1.0, 1.0, 0.2);
        assert_eq!(p, occ::softmax(&z).unwrap());
        // k1 = 0, k2 = 1: two-temperature gated scaling
        let eta = 0.3;
        let t = if top_entropy(&z) > eta { 1.7 } else { 0.8 };
        assert_eq!(depts_scale(&z, 4.0, 0.0, 1.0, 1.7, 0.8, eta), temp_scale(&z, t).unwrap());
        // k2 = 0: doubling depth doubles the divisor
        let a = depts_scale(&z, 2.0, 0.5, 0.0, 1.0, 1.0, eta);
        let halved: Vec<f64> = z.iter().map(|x| x / 2.0).collect();
        let b = depts_scale(&halved, 1.0, 0.5, 0.0, 1.0, 1.0, eta);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        // clamp keeps the output a distribution
        let p = depts_scale(&z, 3.0, -1.0, 0.0, 1.0, 1.0, eta);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reliocc_examples() {
        let z = [0.7, -0.1, 2.2];
        let p = reliocc_scale(&z, 5.0, 0.0, 1.0, &[1.0; 3], &[0.0; 3]);
        assert_eq!(p, occ::softmax(&z).unwrap());
        let p = reliocc_scale(&[2.0, 0.0], 1.0, 1.0, 1.0, &[1.0; 2], &[0.0; 2]);
        let q = temp_scale(&[2.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(p[0], q[0], epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.731059, epsilon = 1e-6);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let s = 0.05 + 0.25 * k as f64;
            let c = reliocc_scale(&z, s, 0.8, 0.5, &[1.0; 3], &[0.0; 3]).into_iter().fold(0.0, f64::max);
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CalibratorKind::ALL {
            assert_eq!(k.name().parse::<CalibratorKind>().unwrap(), k);
        }
        assert!("platt".parse::<CalibratorKind>().is_err());
    }

    proptest! {
        #[test]
        fn scalings_preserve_argmax_and_simplex(
            z in prop::collection::vec(-15.0f64..15.0, 2..7),
            t in 0.05f64..20.0,
            depth in 0.0f64..50.0,
        ) {
            let k = occ::argmax(&z);
            let p = temp_scale(&z, t).unwrap();
            prop_assert_eq!(occ::argmax(&p), k);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let q = depts_scale(&z, depth, 0.1, 0.5, t, 1.0, 0.2);
            prop_assert_eq!(occ::argmax(&q), k);
            prop_assert!(q.iter().all(|&x| x >= 0.0));
        }
    }
}
