//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Every key has a default, unknown keys are rejected, and command-line flags
//! (`--seed`, `--out`) override the file.
//!
//! ```toml
//! seed = 7
//!
//! [network]
//! segments = 10
//!
//! [loss]
//! eta = "auto"        # or a number
//! lambda_r = 0.4
//!
//! [dataset.scene]
//! height = 256
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetConfig, SamplerConfig};
use crate::losses::{FLossMode, LossWeights, PcSign};
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Contour weight: derived from the training masks or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Fixed(f64),
    Named(EtaAuto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaAuto {
    Auto,
}

impl Default for EtaSetting {
    fn default() -> Self {
        EtaSetting::Named(EtaAuto::Auto)
    }
}

impl EtaSetting {
    /// The fixed value, or `auto` evaluated lazily.
    pub fn resolve(self, auto: impl FnOnce() -> f64) -> f64 {
        match self {
            EtaSetting::Fixed(v) => v,
            EtaSetting::Named(EtaAuto::Auto) => auto(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub eta: EtaSetting,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub pc_sign: PcSign,
    pub f_loss_mode: FLossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            eta: EtaSetting::default(),
            lambda_c: w.lambda_c,
            lambda_r: w.lambda_r,
            pc_sign: w.pc_sign,
            f_loss_mode: w.f_loss_mode,
        }
    }
}

impl LossConfig {
    pub fn weights(&self, auto_eta: impl FnOnce() -> f64) -> LossWeights {
        LossWeights {
            eta: self.eta.resolve(auto_eta),
            lambda_c: self.lambda_c,
            lambda_r: self.lambda_r,
            pc_sign: self.pc_sign,
            f_loss_mode: self.f_loss_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Which manifest split to evaluate: `train` or `eval`.
    pub split: String,
    /// Also emit a row after majority-vote postprocessing.
    pub postprocess: bool,
    /// Sliding-window stride for whole-scene prediction.
    pub stride: usize,
    pub overlays: bool,
    pub overlay_alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: "eval".into(), postprocess: true, stride: 32, overlays: true, overlay_alpha: 0.45 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub strides: Vec<usize>,
    /// Majority-vote postprocessing during the stride sweep.
    pub postprocess: bool,
    /// Training overrides for each cell of the loss-weight grid.
    pub lambda_train: TrainConfig,
    /// Training patches per grid cell (taken from the front of the train split).
    pub lambda_patches: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strides: vec![8, 16, 32, 64],
            postprocess: false,
            lambda_train: TrainConfig::default(),
            lambda_patches: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { step: crate::autodiff::DEFAULT_FD_STEP, tolerance: crate::checks::GRADCHECK_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory written by `synth` and read by the other commands.
    pub data: PathBuf,
    /// Output directory for checkpoints, logs, tables and overlays.
    pub out: PathBuf,
    /// Checkpoint to load; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data: PathBuf::from("data"), out: PathBuf::from("out"), checkpoint: None }
    }
}

impl PathsConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.network.validate().map_err(|e| invalid(&e))?;
        self.sampler.validate().map_err(|e| invalid(&e))?;
        self.dataset.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.sweep.lambda_train.validate().map_err(|e| invalid(&e))?;
        self.loss.weights(|| 1.0).validate().map_err(|e| invalid(&e))?;
        if let EtaSetting::Fixed(v) = self.loss.eta {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!("eta must be positive, got {v}")));
            }
        }
        if self.sampler.patch_size != self.network.height || self.sampler.patch_size != self.network.width {
            return Err(ConfigError::Invalid(format!(
                "patch size {} must match the network input {}×{}",
                self.sampler.patch_size, self.network.height, self.network.width
            )));
        }
        if !matches!(self.eval.split.as_str(), "train" | "eval") {
            return Err(ConfigError::Invalid(format!("eval split must be train or eval, got {}", self.eval.split)));
        }
        if self.eval.stride == 0 || self.sweep.strides.contains(&0) {
            return Err(ConfigError::Invalid("strides must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.overlay_alpha) {
            return Err(ConfigError::Invalid("overlay alpha outside [0, 1]".into()));
        }
        if !(self.gradcheck.step > 0.0 && self.gradcheck.tolerance > 0.0) {
            return Err(ConfigError::Invalid("gradcheck step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[loss]\neta = 2.5\nlambda_r = 0.4\n[dataset.scene]\nnoise = 0.05\n")
            .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.loss.eta, EtaSetting::Fixed(2.5));
        assert_eq!(cfg.loss.lambda_r, 0.4);
        assert_eq!(cfg.dataset.scene.noise, 0.05);
        assert_eq!(cfg.network, NetworkConfig::default());
        assert_eq!(RunConfig::from_toml("[loss]\neta = \"auto\"\n").unwrap().loss.eta, EtaSetting::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3\n").is_err());
        assert!(RunConfig::from_toml("[network]\nsegmnts = 3\n").is_err());
        assert!(RunConfig::from_toml("[loss]\neta = \"sometimes\"\n").is_err());
    }

    #[test]
    fn cross_section_validation() {
        assert!(RunConfig::from_toml("[sampler]\npatch_size = 32\n").is_err());
        assert!(RunConfig::from_toml("[sampler]\npatch_size = 32\n[network]\nheight = 32\nwidth = 32\n").is_ok());
    }
}
