use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::occ::VoxelBatch;
use crate::rng;

/// Voxels per contiguous block removed by [`PerturbKind::BlockDrop`].
pub const DROP_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbKind {
    /// Gaussian noise of std `magnitude` on every feature entry.
    FeatureNoise,
    /// Gaussian noise of std `magnitude` on every logit.
    LogitNoise,
    /// Zeroes the features of contiguous voxel blocks covering a `magnitude`
    /// fraction of the batch.
    BlockDrop,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [PerturbKind::FeatureNoise, PerturbKind::LogitNoise, PerturbKind::BlockDrop];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::FeatureNoise => "feature_noise",
            PerturbKind::LogitNoise => "logit_noise",
            PerturbKind::BlockDrop => "block_drop",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown perturbation {s:?}")))
    }
}

fn add_noise(values: &mut [f32], row: usize, magnitude: f64, seed: u64, kind: u64) {
    if row == 0 {
        return;
    }
    for (i, chunk) in values.chunks_mut(row).enumerate() {
        let eps = rng::normal_vec(seed, &[rng::TAG_PERTURB, kind, i as u64], row);
        for (x, e) in chunk.iter_mut().zip(eps) {
            *x = (*x as f64 + magnitude * e) as f32;
        }
    }
}

/// Returns a perturbed copy of `batch`; labels are never changed.
pub fn perturb(batch: &VoxelBatch, kind: PerturbKind, magnitude: f64, seed: u64) -> Result<VoxelBatch> {
    batch.validate()?;
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(Error::InvalidArgument(format!("magnitude must be >= 0, got {magnitude}")));
    }
    if kind == PerturbKind::BlockDrop && magnitude > 1.0 {
        return Err(Error::InvalidArgument("block_drop fraction must be in [0, 1]".into()));
    }
    if matches!(kind, PerturbKind::FeatureNoise | PerturbKind::BlockDrop) && batch.features.is_none() {
        return Err(Error::MissingField("features"));
    }
    let mut out = batch.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    match kind {
        PerturbKind::LogitNoise => {
            let w = out.width();
            add_noise(&mut out.logits, w, magnitude, seed, 0);
        }
        PerturbKind::FeatureNoise => {
            let d = out.feature_dim;
            add_noise(out.features.as_mut().unwrap(), d, magnitude, seed, 1);
        }
        PerturbKind::BlockDrop => {
            let n = out.n();
            let d = out.feature_dim;
            let blocks = n.div_ceil(DROP_BLOCK);
            let target = (magnitude * n as f64).round() as usize;
            let order = rng::permutation(seed, &[rng::TAG_PERTURB, 2], blocks);
            let f = out.features.as_mut().unwrap();
            let mut dropped = 0;
            for b in order {
                if dropped >= target {
                    break;
                }
                let start = b * DROP_BLOCK;
                let end = (start + DROP_BLOCK).min(n);
                f[start * d..end * d].fill(0.0);
                dropped += end - start;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> VoxelBatch {
        let n = 300;
        let mut b = VoxelBatch::new(2, (0..n).map(|i| (i % 3) as u16).collect());
        b.logits = rng::normal_vec(1, &[0], n * 3).iter().map(|&x| x as f32).collect();
        b.feature_dim = 4;
        b.features = Some(rng::normal_vec(2, &[0], n * 4).iter().map(|&x| x as f32 + 0.5).collect());
        b
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let b = batch();
        for k in PerturbKind::ALL {
            assert_eq!(perturb(&b, k, 0.0, 3).unwrap(), b);
        }
    }

    #[test]
    fn full_block_drop_zeroes_everything() {
        let p = perturb(&batch(), PerturbKind::BlockDrop, 1.0, 3).unwrap();
        assert!(p.features.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn partial_block_drop_covers_about_the_fraction() {
        let p = perturb(&batch(), PerturbKind::BlockDrop, 0.5, 3).unwrap();
        let d = p.feature_dim;
        let zero_rows = p.features.unwrap().chunks(d).filter(|r| r.iter().all(|&x| x == 0.0)).count();
        assert!((150..150 + DROP_BLOCK).contains(&zero_rows), "{zero_rows}");
    }

    #[test]
    fn labels_untouched_and_seeded() {
        let b = batch();
        let p = perturb(&b, PerturbKind::LogitNoise, 1.0, 4).unwrap();
        assert_eq!(p.labels, b.labels);
        assert_ne!(p.logits, b.logits);
        assert_eq!(p, perturb(&b, PerturbKind::LogitNoise, 1.0, 4).unwrap());
        let f = perturb(&b, PerturbKind::FeatureNoise, 1.0, 4).unwrap();
        assert_eq!(f.logits, b.logits);
        assert_ne!(f.features, b.features);
    }

    #[test]
    fn missing_features_rejected() {
        let b = VoxelBatch::new(2, vec![0, 1]);
        assert!(matches!(
            perturb(&b, PerturbKind::FeatureNoise, 1.0, 0),
            Err(Error::MissingField("features"))
        ));
    }
}
