//! Voting-based segmentation of contour-levee farmland.
//!
//! The crate bundles a small reverse-mode autodiff engine, the voting network
//! (segment slices, class map, fusion of per-segment votes), its composite
//! loss, synthetic data generation with patch sampling, and sliding-window
//! inference with evaluation metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod inference;
pub mod losses;
pub mod network;
pub mod train;
