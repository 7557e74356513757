use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occ::{VoxelBatch, IGNORE};
use crate::par;
use crate::rng;

pub const NUM_CLASSES: usize = 4;
pub const GROUND: u16 = 1;
pub const CAR: u16 = 2;
pub const POLE: u16 = 3;
pub const VEGETATION: u16 = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES + 1] = ["empty", "ground", "car", "pole", "vegetation"];

/// Synthetic scene parameters. Every key is optional in the TOML form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Grid size (L, W, H) in voxels.
    pub dims: [usize; 3],
    /// Edge length of a voxel in meters.
    pub voxel_size: f64,
    pub feature_dim: usize,
    /// Feature noise std at depth 0.
    pub noise_base: f64,
    /// Growth of the feature noise std per meter of depth.
    pub noise_depth_slope: f64,
    pub prototype_seed: u64,
    /// Std of the class prototype entries.
    pub prototype_scale: f64,
    pub cars: usize,
    pub poles: usize,
    pub blobs: usize,
    pub ignore_fraction: f64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 8],
            voxel_size: 0.2,
            feature_dim: 16,
            noise_base: 0.4,
            noise_depth_slope: 0.25,
            prototype_seed: 7,
            prototype_scale: 1.0,
            cars: 4,
            poles: 6,
            blobs: 4,
            ignore_fraction: 0.02,
            train_scenes: 6,
            val_scenes: 2,
            test_scenes: 2,
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.feature_dim == 0 || self.feature_dim > u16::MAX as usize {
            return Err(Error::InvalidArgument("feature_dim must be in 1..=65535".into()));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.noise_base) || !finite_nonneg(self.noise_depth_slope) {
            return Err(Error::InvalidArgument("noise parameters must be >= 0".into()));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::InvalidArgument("voxel_size must be positive".into()));
        }
        if !finite_nonneg(self.prototype_scale) {
            return Err(Error::InvalidArgument("prototype_scale must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ignore_fraction) {
            return Err(Error::InvalidArgument("ignore_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn voxels_per_scene(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major class prototypes, `(S + 1) x d`.
    pub fn prototypes(&self) -> Vec<f64> {
        rng::normal_vec(self.prototype_seed, &[rng::TAG_SCENE, u64::MAX], (NUM_CLASSES + 1) * self.feature_dim)
            .into_iter()
            .map(|x| x * self.prototype_scale)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub train: VoxelBatch,
    pub val: VoxelBatch,
    pub test: VoxelBatch,
}

/// One labelled grid; voxel `(x, y, z)` is at `(x * W + y) * H + z`.
struct Scene {
    labels: Vec<u16>,
}

fn place_objects(c: &SceneConfig, r: &mut rng::Rng) -> Scene {
    let [l, w, h] = c.dims;
    let at = |x: usize, y: usize, z: usize| (x * w + y) * h + z;
    let mut labels = vec![0u16; l * w * h];
    for x in 0..l {
        for y in 0..w {
            labels[at(x, y, 0)] = GROUND;
        }
    }
    for _ in 0..c.cars {
        let (sx, sy) = if r.random::<bool>() { (4, 2) } else { (2, 4) };
        let (sx, sy, sz) = (sx.min(l), sy.min(w), 2.min(h.saturating_sub(1)));
        let x0 = r.random_range(0..=l - sx);
        let y0 = r.random_range(0..=w - sy);
        for x in x0..x0 + sx {
            for y in y0..y0 + sy {
                for z in 1..1 + sz {
                    labels[at(x, y, z)] = CAR;
                }
            }
        }
    }
    for _ in 0..c.poles {
        let x = r.random_range(0..l);
        let y = r.random_range(0..w);
        let top = if h > 2 { r.random_range(h / 2..h) } else { h - 1 };
        for z in 1..=top {
            labels[at(x, y, z)] = POLE;
        }
    }
    for _ in 0..c.blobs {
        let cx = r.random_range(0.0..l as f64);
        let cy = r.random_range(0.0..w as f64);
        let cz = r.random_range(0.0..h as f64).max(1.0);
        let radius: f64 = r.random_range(1.5..3.0);
        for x in 0..l {
            for y in 0..w {
                for z in 1..h {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
                    let i = at(x, y, z);
                    if d2 <= radius * radius && labels[i] == 0 {
                        labels[i] = VEGETATION;
                    }
                }
            }
        }
    }
    Scene { labels }
}

fn render_scene(c: &SceneConfig, prototypes: &[f64], seed: u64, split: u64, index: u64) -> VoxelBatch {
    let [_, w, h] = c.dims;
    let d = c.feature_dim;
    let mut r = rng::stream(seed, &[rng::TAG_SCENE, split, index]);
    let Scene { mut labels } = place_objects(c, &mut r);
    let n = labels.len();

    let depths: Vec<f32> = (0..n)
        .map(|i| {
            let (x, y, z) = (i / (w * h), (i / h) % w, i % h);
            (((x * x + y * y + z * z) as f64).sqrt() * c.voxel_size) as f32
        })
        .collect();

    let mut features = vec![0f32; n * d];
    let mut noise = vec![0.0; d];
    for i in 0..n {
        rng::fill_normal(&mut r, &mut noise);
        let std = c.noise_base + c.noise_depth_slope * depths[i] as f64;
        let proto = &prototypes[labels[i] as usize * d..(labels[i] as usize + 1) * d];
        for k in 0..d {
            features[i * d + k] = (proto[k] + std * noise[k]) as f32;
        }
    }

    let n_ignore = (c.ignore_fraction * n as f64).round() as usize;
    let perm = rng::permutation(seed, &[rng::TAG_SCENE, split, index, 1], n);
    for &i in &perm[..n_ignore] {
        labels[i] = IGNORE;
    }

    VoxelBatch {
        num_classes: NUM_CLASSES,
        feature_dim: d,
        logits: vec![0.0; n * (NUM_CLASSES + 1)],
        labels,
        features: Some(features),
        sigmas: None,
        depths: Some(depths),
    }
}

/// Concatenates batches that share class count and optional fields.
pub fn concat(batches: &[VoxelBatch]) -> VoxelBatch {
    let first = &batches[0];
    let cat = |f: fn(&VoxelBatch) -> Option<&Vec<f32>>| -> Option<Vec<f32>> {
        f(first).map(|_| batches.iter().flat_map(|b| f(b).unwrap().iter().copied()).collect())
    };
    VoxelBatch {
        num_classes: first.num_classes,
        feature_dim: first.feature_dim,
        labels: batches.iter().flat_map(|b| b.labels.iter().copied()).collect(),
        logits: batches.iter().flat_map(|b| b.logits.iter().copied()).collect(),
        features: cat(|b| b.features.as_ref()),
        sigmas: cat(|b| b.sigmas.as_ref()),
        depths: cat(|b| b.depths.as_ref()),
    }
}

fn split(c: &SceneConfig, prototypes: &[f64], seed: u64, id: u64, count: usize) -> VoxelBatch {
    if count == 0 {
        let mut b = VoxelBatch::new(NUM_CLASSES, Vec::new());
        b.feature_dim = c.feature_dim;
        b.features = Some(Vec::new());
        b.depths = Some(Vec::new());
        return b;
    }
    let scenes = par::map_range(count, |k| render_scene(c, prototypes, seed, id, k as u64));
    concat(&scenes)
}

/// Generates the train, validation and test splits. Scenes are rendered
/// independently from per-scene seeds, so the result does not depend on
/// thread count.
pub fn generate_scenes(config: &SceneConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let prototypes = config.prototypes();
    Ok(Dataset {
        config: config.clone(),
        train: split(config, &prototypes, seed, 0, config.train_scenes),
        val: split(config, &prototypes, seed, 1, config.val_scenes),
        test: split(config, &prototypes, seed, 2, config.test_scenes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            dims: [12, 10, 6],
            train_scenes: 2,
            val_scenes: 1,
            test_scenes: 1,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_scenes(&small(), 3).unwrap();
        let b = generate_scenes(&small(), 3).unwrap();
        assert_eq!(a, b);
        let c = generate_scenes(&small(), 4).unwrap();
        assert_ne!(a.train.labels, c.train.labels);
    }

    #[test]
    fn noiseless_features_equal_prototypes() {
        let cfg = SceneConfig {
            noise_base: 0.0,
            noise_depth_slope: 0.0,
            ..small()
        };
        let ds = generate_scenes(&cfg, 1).unwrap();
        let p = cfg.prototypes();
        let d = cfg.feature_dim;
        let b = &ds.train;
        for i in b.valid_indices() {
            let y = b.labels[i] as usize;
            let proto: Vec<f32> = p[y * d..(y + 1) * d].iter().map(|&x| x as f32).collect();
            assert_eq!(b.feature_row(i).unwrap(), &proto[..]);
        }
    }

    #[test]
    fn empty_is_most_frequent_on_default_config() {
        let ds = generate_scenes(&SceneConfig::default(), 0).unwrap();
        let mut counts = [0usize; NUM_CLASSES + 1];
        for &l in ds.train.labels.iter().filter(|&&l| l != IGNORE) {
            counts[l as usize] += 1;
        }
        assert!(counts[1..].iter().all(|&c| c < counts[0]), "{counts:?}");
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        let ignored = ds.train.labels.iter().filter(|&&l| l == IGNORE).count();
        assert_eq!(ignored, 6 * (0.02f64 * 8192.0).round() as usize);
        ds.train.validate().unwrap();
    }

    #[test]
    fn degenerate_dims_rejected() {
        let cfg = SceneConfig {
            dims: [0, 4, 4],
            ..SceneConfig::default()
        };
        assert!(generate_scenes(&cfg, 0).is_err());
        assert!(SceneConfig::from_toml("dims = [4, 4, 0]").is_err());
        assert!(SceneConfig::from_toml("noise_base = -1.0").is_err());
        assert!(SceneConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn toml_roundtrip_and_defaults() {
        let c = SceneConfig::from_toml("noise_base = 0.5\n").unwrap();
        assert_eq!(c.noise_base, 0.5);
        assert_eq!(c.dims, [32, 32, 8]);
        assert_eq!(SceneConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
