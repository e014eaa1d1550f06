//! Label-centric and region-centric loss terms.
//!
//! Every function records its computation on a [`Graph`] so that gradients
//! reach the network. Pixel-averaged terms use the mean over `H·W`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ReduceKind, Tensor, Var};
use crate::network::{position_channels, ForwardOutput, AREA_EPSILON};

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid loss weights: {0}")]
    Weights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcSign {
    /// Adds the partition coefficient to the minimized loss.
    Additive,
    /// Subtracts it, rewarding confident memberships.
    ConfidenceEncouraging,
}

impl PcSign {
    pub fn factor(self) -> f64 {
        match self {
            PcSign::Additive => 1.0,
            PcSign::ConfidenceEncouraging => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FLossMode {
    /// Squash `F` (and the reconstructed labels) before the cross-entropy.
    SquashedLogits,
    /// Treat `F` and the reconstructed labels as probabilities (clamped).
    ProbabilityNll,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eta: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub pc_sign: PcSign,
    pub f_loss_mode: FLossMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda_c: 1.0,
            lambda_r: 1.0,
            pc_sign: PcSign::ConfidenceEncouraging,
            f_loss_mode: FLossMode::ProbabilityNll,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.eta > 0.0) {
            return Err(LossError::Weights(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_r >= 0.0) {
            return Err(LossError::Weights(format!(
                "term weights must be non-negative, got {} and {}",
                self.lambda_c, self.lambda_r
            )));
        }
        Ok(())
    }
}

/// Default contour weight: background/contour pixel ratio clamped to `[1, 10]`.
pub fn balanced_eta(background_pixels: usize, contour_pixels: usize) -> f64 {
    if contour_pixels == 0 {
        return 10.0;
    }
    (background_pixels as f64 / contour_pixels as f64).clamp(1.0, 10.0)
}

/// Position and colour features used for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    /// `H×W×2`, `(i/(H-1), j/(W-1))`.
    pub position: Tensor,
    /// `H×W×3`, RGB in `[0, 1]`.
    pub color: Tensor,
}

impl PixelFeatures {
    pub fn from_image(image: &Tensor) -> Result<Self, LossError> {
        let (h, w) = match *image.shape() {
            [h, w, 3] => (h, w),
            ref s => return Err(LossError::Shape(format!("image must be H×W×3, got {s:?}"))),
        };
        Ok(Self { position: position_channels(h, w), color: image.clone() })
    }
}

/// One-hot `H×W×2` labels built from a binary contour mask.
pub fn one_hot_labels(mask: &[u8], height: usize, width: usize) -> Result<Tensor, LossError> {
    if mask.len() != height * width {
        return Err(LossError::Shape(format!("mask has {} pixels, expected {}", mask.len(), height * width)));
    }
    let data = mask.iter().flat_map(|&m| if m > 0 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
    Ok(Tensor::new(&[height, width, 2], data).expect("consistent shape"))
}

fn hw(g: &Graph, v: Var, what: &str) -> Result<(usize, usize, usize), LossError> {
    match *g.shape(v) {
        [h, w, d] => Ok((h, w, d)),
        ref s => Err(LossError::Shape(format!("{what} must be H×W×D, got {s:?}"))),
    }
}

/// Contour-weighted binary cross-entropy on the contour channel of `F`.
pub fn weighted_bce_f(g: &mut Graph, fused: Var, labels: Var, eta: f64, mode: FLossMode) -> Result<Var, LossError> {
    if g.value(fused).iter().any(|v| v.is_nan()) {
        return Err(LossError::NonFinite("fused map"));
    }
    if g.shape(fused) != g.shape(labels) {
        return Err(LossError::Shape(format!("F {:?} vs labels {:?}", g.shape(fused), g.shape(labels))));
    }
    let f_contour = g.select(fused, 2, 1)?;
    let p = match mode {
        FLossMode::SquashedLogits => g.sigmoid(f_contour)?,
        FLossMode::ProbabilityNll => g.clamp(f_contour, PROB_CLAMP, 1.0 - PROB_CLAMP),
    };
    let contour = g.select(labels, 2, 1)?;
    let log_p = g.log(p)?;
    let neg_p = g.neg(p)?;
    let one_minus_p = g.shift(neg_p, 1.0);
    let log_q = g.log(one_minus_p)?;
    let pos = g.mul(contour, log_p)?;
    let pos = g.scale(pos, eta);
    let neg_contour = g.neg(contour)?;
    let background = g.shift(neg_contour, 1.0);
    let neg = g.mul(background, log_q)?;
    let ll = g.add(pos, neg)?;
    let mean = g.mean_all(ll);
    Ok(g.neg(mean)?)
}

/// Mean per-pixel softmax cross-entropy of the class logits against one-hot labels.
pub fn softmax_ce_c(g: &mut Graph, c_logits: Var, labels: Var) -> Result<Var, LossError> {
    let (h, w, _) = hw(g, c_logits, "class logits")?;
    if g.shape(c_logits) != g.shape(labels) {
        return Err(LossError::Shape(format!("C {:?} vs labels {:?}", g.shape(c_logits), g.shape(labels))));
    }
    let log_probs = g.log_softmax(c_logits, 2)?;
    let picked = g.mul(labels, log_probs)?;
    let total = g.sum_all(picked);
    Ok(g.scale(total, -1.0 / (h * w) as f64))
}

/// Membership-weighted mean feature of each segment, `K×D`.
pub fn centroid_features(g: &mut Graph, segments: Var, features: Var) -> Result<Var, LossError> {
    let (h, w, k) = hw(g, segments, "segments")?;
    let (fh, fw, d) = hw(g, features, "features")?;
    if (fh, fw) != (h, w) {
        return Err(LossError::Shape(format!("segments {h}×{w} vs features {fh}×{fw}")));
    }
    let s = g.reshape(segments, &[h * w, k])?;
    let a = g.reshape(features, &[h * w, d])?;
    let st = g.transpose(s)?;
    let weighted = g.matmul(st, a)?;
    let area = g.reduce(s, ReduceKind::Sum, &[0])?;
    let area = g.shift(area, AREA_EPSILON);
    let area = g.reshape(area, &[k, 1])?;
    Ok(g.div(weighted, area)?)
}

/// Per-pixel convex combination of centroids, `H×W×D`.
pub fn reconstruct(g: &mut Graph, segments: Var, centroids: Var) -> Result<Var, LossError> {
    let (h, w, k) = hw(g, segments, "segments")?;
    let d = match *g.shape(centroids) {
        [ck, d] if ck == k => d,
        ref s => return Err(LossError::Shape(format!("centroids must be {k}×D, got {s:?}"))),
    };
    let s = g.reshape(segments, &[h * w, k])?;
    let flat = g.matmul(s, centroids)?;
    Ok(g.reshape(flat, &[h, w, d])?)
}

/// Cross-entropy between labels and their reconstruction from segment centroids.
pub fn label_reconstruction_ce(g: &mut Graph, segments: Var, labels: Var, mode: FLossMode) -> Result<Var, LossError> {
    let (h, w, _) = hw(g, labels, "labels")?;
    let centroids = centroid_features(g, segments, labels)?;
    let rebuilt = reconstruct(g, segments, centroids)?;
    let log_probs = match mode {
        FLossMode::SquashedLogits => g.log_softmax(rebuilt, 2)?,
        FLossMode::ProbabilityNll => {
            let p = g.clamp(rebuilt, PROB_CLAMP, 1.0 - PROB_CLAMP);
            g.log(p)?
        }
    };
    let picked = g.mul(labels, log_probs)?;
    let total = g.sum_all(picked);
    Ok(g.scale(total, -1.0 / (h * w) as f64))
}

/// Components of the label-centric term.
#[derive(Debug, Clone, Copy)]
pub struct LabelTerms {
    pub fused_bce: Var,
    pub class_ce: Var,
    pub label_recon: Var,
    pub total: Var,
}

pub fn label_centric_loss(
    g: &mut Graph,
    fused: Var,
    c_logits: Var,
    segments: Var,
    labels: Var,
    weights: &LossWeights,
) -> Result<LabelTerms, LossError> {
    let fused_bce = weighted_bce_f(g, fused, labels, weights.eta, weights.f_loss_mode)?;
    let class_ce = softmax_ce_c(g, c_logits, labels)?;
    let label_recon = label_reconstruction_ce(g, segments, labels, weights.f_loss_mode)?;
    let partial = g.add(fused_bce, class_ce)?;
    let total = g.add(partial, label_recon)?;
    Ok(LabelTerms { fused_bce, class_ce, label_recon, total })
}

/// `(1/N) Σ S²` with `N = H·W·K`.
pub fn partition_coefficient_loss(g: &mut Graph, segments: Var) -> Result<Var, LossError> {
    hw(g, segments, "segments")?;
    let sq = g.square(segments)?;
    Ok(g.mean_all(sq))
}

fn granularity_error(g: &mut Graph, segments: Var, features: Var) -> Result<Var, LossError> {
    let (h, w, _) = hw(g, features, "features")?;
    let centroids = centroid_features(g, segments, features)?;
    let rebuilt = reconstruct(g, segments, centroids)?;
    let diff = g.sub(features, rebuilt)?;
    let sq = g.square(diff)?;
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / (h * w) as f64))
}

/// Position and colour reconstruction errors, each averaged over `H·W`.
pub fn granularity_loss(g: &mut Graph, segments: Var, position: Var, color: Var) -> Result<(Var, Var), LossError> {
    Ok((granularity_error(g, segments, position)?, granularity_error(g, segments, color)?))
}

#[derive(Debug, Clone, Copy)]
pub struct RegionTerms {
    pub position: Var,
    pub color: Var,
    pub partition: Var,
    pub total: Var,
}

pub fn region_centric_loss(
    g: &mut Graph,
    segments: Var,
    position: Var,
    color: Var,
    pc_sign: PcSign,
) -> Result<RegionTerms, LossError> {
    let (pos, col) = granularity_loss(g, segments, position, color)?;
    let partition = partition_coefficient_loss(g, segments)?;
    let signed = g.scale(partition, pc_sign.factor());
    let partial = g.add(pos, col)?;
    let total = g.add(partial, signed)?;
    Ok(RegionTerms { position: pos, color: col, partition, total })
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub label: LabelTerms,
    pub region: RegionTerms,
    pub total: Var,
}

/// `λ_c·L_c + λ_r·L_r`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    fused: Var,
    c_logits: Var,
    segments: Var,
    labels: Var,
    position: Var,
    color: Var,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    let label = label_centric_loss(g, fused, c_logits, segments, labels, weights)?;
    let region = region_centric_loss(g, segments, position, color, weights.pc_sign)?;
    let lc = g.scale(label.total, weights.lambda_c);
    let lr = g.scale(region.total, weights.lambda_r);
    let total = g.add(lc, lr)?;
    Ok(LossBreakdown { label, region, total })
}

/// Convenience wrapper binding labels and features of one sample as constants.
pub fn forward_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    labels: &Tensor,
    features: &PixelFeatures,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    let l = g.constant(labels);
    let p = g.constant(&features.position);
    let c = g.constant(&features.color);
    total_loss(g, out.fused, out.c_logits, out.segments, l, p, c, weights)
}
