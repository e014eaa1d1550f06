//! The voting network: a small encoder-decoder backbone producing segment
//! slices and a class map, followed by the fusion block.

mod backbone;
mod voting;

pub use backbone::{backbone_forward, init_params, param_layout, position_channels, BackboneOutput};
pub use voting::{fusion_block, segment_softmax, voting_block, CountMode, VoteOutcome, VoteSettings, AREA_EPSILON};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ParamSet, Tensor, Var};

/// Number of semantic classes: background and contour levee.
pub const CLASS_COUNT: usize = 2;
/// Spatial reduction of the backbone (three stride-2 stages).
pub const DOWNSAMPLE_FACTOR: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("image {height}×{width} is not divisible by {factor}")]
    Dimensions { height: usize, width: usize, factor: usize },
    #[error("expected {expected} segment slices, got {got}")]
    SegmentCount { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Maximum number of segments `K`.
    pub segments: usize,
    pub height: usize,
    pub width: usize,
    /// Channel widths: full-resolution stem, then the three encoder stages.
    pub widths: [usize; 4],
    pub count_temperature: f64,
    pub count_mode: CountMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            segments: 10,
            height: 64,
            width: 64,
            widths: [16, 32, 32, 32],
            count_temperature: 0.1,
            count_mode: CountMode::AreaNormalized,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.segments < 2 {
            return Err(NetworkError::Config(format!("segments must be at least 2, got {}", self.segments)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(NetworkError::Config(format!(
                "input must be at least 8×8, got {}×{}",
                self.height, self.width
            )));
        }
        if !self.height.is_multiple_of(DOWNSAMPLE_FACTOR) || !self.width.is_multiple_of(DOWNSAMPLE_FACTOR) {
            return Err(NetworkError::Dimensions { height: self.height, width: self.width, factor: DOWNSAMPLE_FACTOR });
        }
        if !(self.count_temperature > 0.0) {
            return Err(NetworkError::Config(format!(
                "count temperature must be positive, got {}",
                self.count_temperature
            )));
        }
        if self.widths.contains(&0) {
            return Err(NetworkError::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    pub fn vote_settings(&self) -> VoteSettings {
        VoteSettings { segments: self.segments, temperature: self.count_temperature, count_mode: self.count_mode }
    }
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub s_logits: Var,
    /// Segment stack `S`, `H×W×K`, simplex per pixel.
    pub segments: Var,
    pub c_logits: Var,
    /// Per-pixel softmax of the class logits.
    pub c_probs: Var,
    /// Fused map `F`, `H×W×2`.
    pub fused: Var,
}

/// Backbone + fusion block over bound parameters.
pub fn forward(
    g: &mut Graph,
    image: Var,
    config: &NetworkConfig,
    params: &[Var],
) -> Result<ForwardOutput, NetworkError> {
    let BackboneOutput { s_logits, c_logits } = backbone_forward(g, image, config, params)?;
    let segments = segment_softmax(g, s_logits)?;
    let c_probs = g.softmax(c_logits, 2)?;
    let fused = fusion_block(g, segments, c_probs, &config.vote_settings())?;
    Ok(ForwardOutput { s_logits, segments, c_logits, c_probs, fused })
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteNet {
    pub config: NetworkConfig,
    pub params: ParamSet,
}

/// Concrete outputs of [`VoteNet::predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub segments: Tensor,
    pub c_probs: Tensor,
    pub fused: Tensor,
}

impl VoteNet {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self { config, params })
    }

    /// Records a forward pass with the parameters bound as differentiable leaves.
    pub fn forward(&self, g: &mut Graph, image: &Tensor) -> Result<(ForwardOutput, Vec<Var>), NetworkError> {
        let vars = self.params.bind(g);
        let img = g.constant(image);
        let out = forward(g, img, &self.config, &vars)?;
        Ok((out, vars))
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction, NetworkError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|(_, t)| g.constant(t)).collect();
        let img = g.constant(image);
        let out = forward(&mut g, img, &self.config, &vars)?;
        Ok(Prediction { segments: g.tensor(out.segments), c_probs: g.tensor(out.c_probs), fused: g.tensor(out.fused) })
    }
}
