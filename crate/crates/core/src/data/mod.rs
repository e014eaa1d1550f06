//! Synthetic farmland scenes, raster I/O and training-patch sampling.

mod dataset;
mod manifest;
mod raster_io;
mod rotate;
mod sampler;
mod scene;

pub use dataset::{
    build_patch_split, scene_patches, select_patches, DatasetConfig, PatchPool, PatchRef, PatchSplit, Split,
};
pub use manifest::{read_manifest, write_manifest, ManifestRow, MANIFEST_HEADER};
pub use raster_io::{read_raster, write_raster, RasterPaths};
pub use rotate::{augment_rotations, rotate_raster};
pub use sampler::{
    background_windows, contour_candidates, field_centroid, sample_background_patches, sample_contour_patches,
    Candidate, Patch, PatchClass, SamplerConfig,
};
pub use scene::{generate_scene, SceneSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("could not place field {field} without overlap after {attempts} attempts")]
    Placement { field: usize, attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("patch size {patch} exceeds raster {height}×{width}")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("raster has no field-instance map")]
    MissingInstances,
    #[error("patch must be square, got {height}×{width}")]
    NotSquare { height: usize, width: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// RGB image with a binary contour-levee mask and optional field ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRaster {
    pub height: usize,
    pub width: usize,
    /// Row-major `H×W×3`, values in `[0, 1]`.
    pub image: Vec<f64>,
    /// Row-major `H×W`, 1 marks contour-levee pixels.
    pub mask: Vec<u8>,
    /// Field ids, 0 for background.
    pub instances: Option<Vec<u16>>,
}

impl LabeledRaster {
    pub fn new(height: usize, width: usize, image: Vec<f64>, mask: Vec<u8>) -> Result<Self, DataError> {
        if image.len() != height * width * 3 || mask.len() != height * width {
            return Err(DataError::DimensionMismatch(format!(
                "{height}×{width} raster with {} image values and {} mask values",
                image.len(),
                mask.len()
            )));
        }
        Ok(Self { height, width, image, mask, instances: None })
    }

    pub fn contour_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0).count()
    }

    pub fn contour_fraction(&self) -> f64 {
        self.contour_pixels() as f64 / self.mask.len() as f64
    }

    /// Copies the `size×size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> LabeledRaster {
        assert!(row + size <= self.height && col + size <= self.width, "crop outside raster");
        let mut image = Vec::with_capacity(size * size * 3);
        let mut mask = Vec::with_capacity(size * size);
        let mut ids = self.instances.as_ref().map(|_| Vec::with_capacity(size * size));
        for r in row..row + size {
            let start = r * self.width + col;
            image.extend_from_slice(&self.image[start * 3..(start + size) * 3]);
            mask.extend_from_slice(&self.mask[start..start + size]);
            if let (Some(out), Some(src)) = (ids.as_mut(), self.instances.as_ref()) {
                out.extend_from_slice(&src[start..start + size]);
            }
        }
        LabeledRaster { height: size, width: size, image, mask, instances: ids }
    }

    pub fn image_tensor(&self) -> crate::autodiff::Tensor {
        crate::autodiff::Tensor::new(&[self.height, self.width, 3], self.image.clone()).expect("consistent raster")
    }
}
