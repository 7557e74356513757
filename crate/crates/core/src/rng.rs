//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(seed, tags...)` so a voxel's noise does
//! not depend on which thread draws it or on how many other voxels drew first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a tag path into a single 64-bit key.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for x in out {
        *x = normal(rng);
    }
}

/// Standard-normal vector of length `len` drawn from stream `(seed, tags)`.
pub fn normal_vec(seed: u64, tags: &[u64], len: usize) -> Vec<f64> {
    let mut rng = stream(seed, tags);
    let mut v = vec![0.0; len];
    fill_normal(&mut rng, &mut v);
    v
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(seed: u64, tags: &[u64], n: usize) -> Vec<usize> {
    use rand::Rng as _;
    let mut rng = stream(seed, tags);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

// Stream namespaces.
pub(crate) const TAG_SCENE: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;
pub(crate) const TAG_LOGIT_NOISE: u64 = 3;
pub(crate) const TAG_PAIRS: u64 = 4;
pub(crate) const TAG_DROPOUT: u64 = 5;
pub(crate) const TAG_DUL: u64 = 6;
pub(crate) const TAG_INIT: u64 = 7;
pub(crate) const TAG_PERTURB: u64 = 8;
pub(crate) const TAG_MCD: u64 = 9;
pub(crate) const TAG_CALIB: u64 = 10;
