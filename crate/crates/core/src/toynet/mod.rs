//! Synthetic voxel scenes and a small per-voxel classifier trained with
//! hand-written gradients.

mod net;
mod perturb;
mod scene;

pub use net::{
    loss_and_grad, predict_dump, predict_dump_with_passes, train, train_step, EpochLoss, LossBreakdown, Mode,
    ToyNet, TrainConfig, DEFAULT_DROPOUT, DEFAULT_LR, HIDDEN, MCD_SIGMA_FLOOR,
};
pub use perturb::{perturb, PerturbKind, DROP_BLOCK};
pub use scene::{concat, generate_scenes, Dataset, SceneConfig, CLASS_NAMES, NUM_CLASSES};

use std::path::Path;

use crate::error::{Error, Result};

/// Seed of the reference experiment used by the examples and acceptance checks.
pub const REFERENCE_SEED: u64 = 1;

impl ToyNet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if net.optimizer.num_params() != net.num_params() || net.class_weights.len() != net.width() {
            return Err(Error::Parse("inconsistent network file".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
