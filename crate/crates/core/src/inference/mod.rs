//! Whole-image inference by sliding windows, connected components, classical
//! majority voting, metrics, and the stride / loss-weight experiment tables.

mod components;
mod harness;
mod metrics;
mod render;
mod tiles;

pub use components::{connected_components, majority_vote_postprocess, scaled_min_area, Component, ComponentSet};
pub use harness::{
    evaluate_scene, lambda_ablation, lambda_grid, stride_sweep, AblationCell, AblationRow, AblationTable,
    LambdaSetting, StrideRow, StrideTable,
};
pub use metrics::{compute_metrics, summarize, Confusion, MetricsReport, MetricsSummary, Stat};
pub use render::{overlay_rgb, write_overlay};
pub use tiles::{
    plan_tiles, plan_tiles_with, predict_image, PredictionMap, TileEdge, TilePlan, WindowModel, WindowOutput,
};

use thiserror::Error;

use crate::data::DataError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("window {window} exceeds image {height}×{width}")]
    WindowTooLarge { window: usize, height: usize, width: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("plan/image mismatch: {0}")]
    PlanMismatch(String),
    #[error("pixel {0} is not covered by any window")]
    Uncovered(usize),
    #[error("segments overlap at pixel {0}")]
    OverlappingSegments(usize),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
}
