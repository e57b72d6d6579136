//! Versioned pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::caustic::OpticsConfig;
use crate::classifier::{CnnArchitecture, TrainConfig};
use crate::cs::BasisKind;
use crate::error::{Error, Result};
use crate::pipeline::{AcquisitionConfig, DatasetConfig, FeatureConfig};
use crate::ripple::RippleConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub folds: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Omp,
    Ista,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub solver: Solver,
    pub basis: BasisKind,
    pub k_max: usize,
    /// `None` means `1e-6 · ‖y‖`.
    pub tol: Option<f64>,
    pub seed_dc: bool,
    pub lambda: f64,
    pub max_iters: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            solver: Solver::Omp,
            basis: BasisKind::Dct2d,
            k_max: 60,
            tol: None,
            seed_dc: true,
            lambda: 1e-3,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub version: u32,
    /// Master seed. Overrides every per-section seed when the config is loaded.
    pub seed: u64,
    pub ripple: RippleConfig,
    pub optics: OpticsConfig,
    pub acquisition: AcquisitionConfig,
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub cnn: CnnArchitecture,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub reconstruction: ReconstructionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut c = Self {
            version: CONFIG_VERSION,
            seed: 0,
            ripple: RippleConfig::default(),
            optics: OpticsConfig::default(),
            acquisition: AcquisitionConfig::default(),
            dataset: DatasetConfig::default(),
            features: FeatureConfig::default(),
            cnn: CnnArchitecture::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            reconstruction: ReconstructionConfig::default(),
        };
        c.set_seed(0);
        c
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text)?;
        if c.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                c.version
            )));
        }
        c.set_seed(c.seed);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.ripple.rng_seed = seed;
        self.dataset.augment.rng_seed = seed;
        self.train.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.ripple.validate()?;
        self.optics.validate()?;
        self.acquisition.validate()?;
        self.dataset.augment.validate()?;
        self.cnn.validate()?;
        self.train.validate()?;
        if self.features.image_size != self.cnn.input_size {
            return Err(Error::Config(format!(
                "scalogram image size {} differs from the network input size {}",
                self.features.image_size, self.cnn.input_size
            )));
        }
        if self.optics.mask_nx != self.optics.mask_ny {
            return Err(Error::Config("masks must be square (targets are square)".into()));
        }
        if self.evaluation.folds < 2 {
            return Err(Error::Config("evaluation needs at least 2 folds".into()));
        }
        if self.dataset.samples_per_class < self.evaluation.folds {
            return Err(Error::Config(format!(
                "samples_per_class {} is below the fold count {}",
                self.dataset.samples_per_class, self.evaluation.folds
            )));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, lower-case hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"version": 1, "bogus": 3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"version": 1, "train": {"lr": 0.1}}"#).is_err());
    }

    #[test]
    fn partial_documents_use_defaults() {
        let c = PipelineConfig::from_json(r#"{"version": 1, "seed": 9, "acquisition": {"frames": 64}}"#).unwrap();
        assert_eq!(c.acquisition.frames, 64);
        assert_eq!(c.ripple.rng_seed, 9);
        assert_eq!(c.train.rng_seed, 9);
        assert_eq!(c.cnn, CnnArchitecture::default());
    }

    #[test]
    fn wrong_version_and_bad_values_fail() {
        assert!(PipelineConfig::from_json(r#"{"version": 2}"#).is_err());
        let e = PipelineConfig::from_json(r#"{"version": 1, "features": {"image_size": 32}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.set_seed(1);
        assert_ne!(a.hash(), b.hash());
    }
}
