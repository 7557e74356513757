use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of confidence bins.
pub const DEFAULT_BINS: usize = 15;

/// One confidence bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub bin_index: usize,
    pub count: u64,
    /// Mean confidence of the bin's samples, 0 when empty.
    pub mean_conf: f64,
    /// Fraction of correct samples in the bin, 0 when empty.
    pub mean_acc: f64,
}

impl BinStats {
    pub fn gap(&self) -> f64 {
        (self.mean_acc - self.mean_conf).abs()
    }
}

/// Equal-width bin of `c` among `m` bins over [0, 1].
///
/// Bins are `[k/m, (k+1)/m)` with the last bin closed; the edges are the
/// floating-point values `k as f64 / m as f64`.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut b = ((c * mf).floor().max(0.0) as usize).min(m - 1);
    while b > 0 && c < b as f64 / mf {
        b -= 1;
    }
    while b + 1 < m && c >= (b + 1) as f64 / mf {
        b += 1;
    }
    b
}

fn check_inputs(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if confidences.len() != correct.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} confidences vs {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be positive".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// Per-bin counts, mean confidence and accuracy.
pub fn reliability_diagram(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<Vec<BinStats>> {
    check_inputs(confidences, correct, num_bins)?;
    let mut count = vec![0u64; num_bins];
    let mut hits = vec![0u64; num_bins];
    let mut conf_sum = vec![0.0f64; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, num_bins);
        count[b] += 1;
        hits[b] += ok as u64;
        conf_sum[b] += c;
    }
    Ok((0..num_bins)
        .map(|b| {
            let (mean_conf, mean_acc) = if count[b] > 0 {
                (conf_sum[b] / count[b] as f64, hits[b] as f64 / count[b] as f64)
            } else {
                (0.0, 0.0)
            };
            BinStats {
                bin_index: b,
                count: count[b],
                mean_conf,
                mean_acc,
            }
        })
        .collect())
}

/// ECE from precomputed bins: `sum_m |B_m|/N * |acc(B_m) - conf(B_m)|`.
pub fn ece_from_bins(bins: &[BinStats]) -> f64 {
    let n: u64 = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.count as f64 / n as f64) * (b.mean_acc - b.mean_conf).abs())
        .sum()
}

/// Expected calibration error with `num_bins` equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<f64> {
    reliability_diagram(confidences, correct, num_bins).map(|bins| ece_from_bins(&bins))
}
