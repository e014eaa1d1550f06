//! Differentiable majority voting.
//!
//! A voting block weighs the class map by one segment slice, counts class
//! evidence over the image, turns the counts into class probabilities with a
//! temperature softmax and paints those probabilities back over the segment.
//! The fusion block sums the painted masks of all slices.

use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::autodiff::{Graph, ReduceKind, Var};

/// Normalizer guard for empty segments.
pub const AREA_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Class counts are plain spatial sums.
    Raw,
    /// Counts are divided by the segment's soft area before the softmax.
    AreaNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteSettings {
    pub segments: usize,
    pub temperature: f64,
    pub count_mode: CountMode,
}

/// Graph handles produced by one voting block.
#[derive(Debug, Clone, Copy)]
pub struct VoteOutcome {
    /// `[N_background, N_contour]`.
    pub counts: Var,
    /// Vote probabilities, shape `[2]`.
    pub probs: Var,
    /// `H×W×2` mask, the slice scaled by each class probability.
    pub mask: Var,
}

/// Per-pixel softmax over the `K` slice logits (`H×W×K`).
pub fn segment_softmax(g: &mut Graph, s_logits: Var) -> Result<Var, NetworkError> {
    if g.shape(s_logits).len() != 3 {
        return Err(NetworkError::Shape(format!("segment logits must be H×W×K, got {:?}", g.shape(s_logits))));
    }
    Ok(g.softmax(s_logits, 2)?)
}

/// Votes inside one segment slice `segment` (`H×W`) using class probabilities `c_probs` (`H×W×2`).
pub fn voting_block(
    g: &mut Graph,
    segment: Var,
    c_probs: Var,
    temperature: f64,
    count_mode: CountMode,
) -> Result<VoteOutcome, NetworkError> {
    let (h, w) = match *g.shape(segment) {
        [h, w] => (h, w),
        ref s => return Err(NetworkError::Shape(format!("segment slice must be H×W, got {s:?}"))),
    };
    if g.shape(c_probs) != [h, w, 2] {
        return Err(NetworkError::Shape(format!("class map must be {h}×{w}×2, got {:?}", g.shape(c_probs))));
    }
    if !(temperature > 0.0) {
        return Err(NetworkError::Config(format!("count temperature must be positive, got {temperature}")));
    }
    let column = g.reshape(segment, &[h, w, 1])?;
    let evidence = g.mul(column, c_probs)?;
    let mut counts = g.reduce(evidence, ReduceKind::Sum, &[0, 1])?;
    if count_mode == CountMode::AreaNormalized {
        let area = g.sum_all(segment);
        let area = g.shift(area, AREA_EPSILON);
        counts = g.div(counts, area)?;
    }
    let logits = g.scale(counts, 1.0 / temperature);
    let probs = g.softmax(logits, 0)?;
    let mask = g.mul(column, probs)?;
    Ok(VoteOutcome { counts, probs, mask })
}

/// Sums the voting-block masks of every slice of `segments` (`H×W×K`).
pub fn fusion_block(g: &mut Graph, segments: Var, c_probs: Var, settings: &VoteSettings) -> Result<Var, NetworkError> {
    let k = match *g.shape(segments) {
        [_, _, k] => k,
        ref s => return Err(NetworkError::Shape(format!("segment stack must be H×W×K, got {s:?}"))),
    };
    if k != settings.segments {
        return Err(NetworkError::SegmentCount { expected: settings.segments, got: k });
    }
    let mut fused: Option<Var> = None;
    for i in 0..k {
        let slice = g.select(segments, 2, i)?;
        let vote = voting_block(g, slice, c_probs, settings.temperature, settings.count_mode)?;
        fused = Some(match fused {
            None => vote.mask,
            Some(acc) => g.add(acc, vote.mask)?,
        });
    }
    Ok(fused.expect("at least one segment"))
}
