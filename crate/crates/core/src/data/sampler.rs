//! Circle-based contour patches and sliding-window background patches.

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledRaster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Circle radii as fractions of `R = min(field bbox height, width)`.
    pub r_fractions: Vec<f64>,
    /// Angular step in degrees; must divide 360.
    pub alpha_deg: f64,
    /// Minimum contour fraction for a contour patch to be kept.
    pub keep_threshold: f64,
    pub patch_size: usize,
    pub background_stride: usize,
    /// Maximum contour fraction tolerated in a background window.
    pub background_tolerance: f64,
    pub rotation_set: Vec<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            r_fractions: vec![0.1, 0.2, 0.3],
            alpha_deg: 30.0,
            keep_threshold: 0.35,
            patch_size: 64,
            background_stride: 32,
            background_tolerance: 0.0,
            rotation_set: (1..=36).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(f) = self.r_fractions.iter().find(|&&f| !(f > 0.0 && f < 0.5)) {
            return Err(DataError::Config(format!("r fraction {f} outside (0, 0.5)")));
        }
        if !(self.keep_threshold > 0.0 && self.keep_threshold < 1.0) {
            return Err(DataError::Config(format!("keep threshold {} outside (0, 1)", self.keep_threshold)));
        }
        let steps = 360.0 / self.alpha_deg;
        if !(self.alpha_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(DataError::Config(format!("alpha {} does not divide 360", self.alpha_deg)));
        }
        if self.patch_size == 0 || self.background_stride == 0 {
            return Err(DataError::Config("patch size and stride must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.background_tolerance) {
            return Err(DataError::Config("background tolerance outside [0, 1)".into()));
        }
        Ok(())
    }

    pub fn angle_count(&self) -> usize {
        (360.0 / self.alpha_deg).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchClass {
    Contour,
    Background,
}

impl PatchClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchClass::Contour => "contour",
            PatchClass::Background => "background",
        }
    }
}

impl std::str::FromStr for PatchClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contour" => Ok(PatchClass::Contour),
            "background" => Ok(PatchClass::Background),
            other => Err(format!("unknown patch class {other}")),
        }
    }
}

/// A candidate window on the sampling circle of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub field: u16,
    /// Field centroid `(row, col)`.
    pub centroid: (f64, f64),
    pub radius: f64,
    pub angle_deg: f64,
    /// Rounded circle point `(row, col)`.
    pub center: (i64, i64),
    /// Top-left corner of the window after shifting it inside the raster.
    pub origin: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub scene: String,
    /// `(row, col)` of the sampling point the window was built around.
    pub center: (i64, i64),
    pub origin: (usize, usize),
    pub rotation_deg: f64,
    pub class: PatchClass,
    pub raster: LabeledRaster,
}

/// Mean pixel position `(row, col)` of field `id`.
pub fn field_centroid(ids: &[u16], width: usize, id: u16) -> Option<(f64, f64)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (p, _) in ids.iter().enumerate().filter(|(_, &i)| i == id) {
        sr += (p / width) as f64;
        sc += (p % width) as f64;
        n += 1;
    }
    (n > 0).then(|| (sr / n as f64, sc / n as f64))
}

fn check_fits(raster: &LabeledRaster, patch: usize) -> Result<(), DataError> {
    if patch > raster.height || patch > raster.width {
        return Err(DataError::PatchTooLarge { patch, height: raster.height, width: raster.width });
    }
    Ok(())
}

/// Clamps a window centred at `center` so it lies inside `[0, n)`.
fn shifted_origin(center: i64, patch: usize, n: usize) -> usize {
    let start = center - (patch / 2) as i64;
    start.clamp(0, (n - patch) as i64) as usize
}

/// Every candidate window, before threshold filtering. Contour fields are the
/// instances whose pixels carry the contour label.
pub fn contour_candidates(raster: &LabeledRaster, config: &SamplerConfig) -> Result<Vec<Candidate>, DataError> {
    config.validate()?;
    check_fits(raster, config.patch_size)?;
    let ids = raster.instances.as_ref().ok_or(DataError::MissingInstances)?;
    let w = raster.width;
    let mut fields: Vec<u16> =
        ids.iter().zip(&raster.mask).filter(|(&i, &m)| i > 0 && m > 0).map(|(&i, _)| i).collect();
    fields.sort_unstable();
    fields.dedup();

    let mut out = Vec::new();
    for field in fields {
        let centroid = field_centroid(ids, w, field).expect("field has pixels");
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
        for (p, _) in ids.iter().enumerate().filter(|(_, &i)| i == field) {
            let (r, c) = (p / w, p % w);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
        let extent = ((rmax - rmin + 1).min(cmax - cmin + 1)) as f64;
        for &fraction in &config.r_fractions {
            let radius = fraction * extent;
            for step in 0..config.angle_count() {
                let angle_deg = step as f64 * config.alpha_deg;
                let (sin, cos) = angle_deg.to_radians().sin_cos();
                let center = ((centroid.0 + radius * sin).round() as i64, (centroid.1 + radius * cos).round() as i64);
                let origin = (
                    shifted_origin(center.0, config.patch_size, raster.height),
                    shifted_origin(center.1, config.patch_size, raster.width),
                );
                out.push(Candidate { field, centroid, radius, angle_deg, center, origin });
            }
        }
    }
    Ok(out)
}

/// Candidate windows with at least `keep_threshold` contour pixels.
pub fn sample_contour_patches(
    raster: &LabeledRaster,
    config: &SamplerConfig,
    scene: &str,
) -> Result<Vec<Patch>, DataError> {
    let candidates = contour_candidates(raster, config)?;
    Ok(candidates
        .into_iter()
        .filter_map(|cand| {
            let mut crop = raster.crop(cand.origin.0, cand.origin.1, config.patch_size);
            (crop.contour_fraction() >= config.keep_threshold).then(|| {
                crop.instances = None;
                Patch {
                    scene: scene.to_string(),
                    center: cand.center,
                    origin: cand.origin,
                    rotation_deg: 0.0,
                    class: PatchClass::Contour,
                    raster: crop,
                }
            })
        })
        .collect())
}

/// Origins of the sliding-window grid: `0, stride, 2·stride, …` while the window fits.
pub fn background_windows(height: usize, width: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    if patch > height || patch > width {
        return Vec::new();
    }
    let rows = (0..=height - patch).step_by(stride);
    rows.flat_map(|r| (0..=width - patch).step_by(stride).map(move |c| (r, c))).collect()
}

/// Grid windows whose contour fraction does not exceed the background tolerance.
pub fn sample_background_patches(
    raster: &LabeledRaster,
    config: &SamplerConfig,
    scene: &str,
) -> Result<Vec<Patch>, DataError> {
    config.validate()?;
    check_fits(raster, config.patch_size)?;
    let half = (config.patch_size / 2) as i64;
    Ok(background_windows(raster.height, raster.width, config.patch_size, config.background_stride)
        .into_iter()
        .filter_map(|(r, c)| {
            let mut crop = raster.crop(r, c, config.patch_size);
            (crop.contour_fraction() <= config.background_tolerance).then(|| {
                crop.instances = None;
                Patch {
                    scene: scene.to_string(),
                    center: (r as i64 + half, c as i64 + half),
                    origin: (r, c),
                    rotation_deg: 0.0,
                    class: PatchClass::Background,
                    raster: crop,
                }
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster_with_field(
        h: usize,
        w: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> LabeledRaster {
        let mut r = LabeledRaster::new(h, w, vec![0.5; h * w * 3], vec![0; h * w]).unwrap();
        let mut ids = vec![0u16; h * w];
        for y in rows {
            for x in cols.clone() {
                r.mask[y * w + x] = 1;
                ids[y * w + x] = 1;
            }
        }
        r.instances = Some(ids);
        r
    }

    #[test]
    fn four_compass_candidates_at_ninety_degrees() {
        let r = raster_with_field(100, 100, 30..71, 30..71);
        let cfg =
            SamplerConfig { r_fractions: vec![0.25], alpha_deg: 90.0, patch_size: 16, ..SamplerConfig::default() };
        let c = contour_candidates(&r, &cfg).unwrap();
        assert_eq!(c.len(), 4);
        let centers: Vec<_> = c.iter().map(|c| c.center).collect();
        // centroid (50, 50), radius 0.25·41 = 10.25
        assert_eq!(centers, vec![(50, 60), (60, 50), (50, 40), (40, 50)]);
    }

    #[test]
    fn full_raster_field_keeps_everything() {
        let r = raster_with_field(64, 64, 0..64, 0..64);
        let cfg = SamplerConfig { patch_size: 32, ..SamplerConfig::default() };
        let n = contour_candidates(&r, &cfg).unwrap().len();
        assert_eq!(n, 3 * 12);
        assert_eq!(sample_contour_patches(&r, &cfg, "s").unwrap().len(), n);
    }

    #[test]
    fn background_grid_count() {
        let r = raster_with_field(256, 256, 0..0, 0..0);
        let cfg = SamplerConfig { patch_size: 64, background_stride: 64, ..SamplerConfig::default() };
        assert_eq!(sample_background_patches(&r, &cfg, "s").unwrap().len(), 16);
        let full = raster_with_field(256, 256, 0..256, 0..256);
        assert!(sample_background_patches(&full, &cfg, "s").unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        let bad_alpha = SamplerConfig { alpha_deg: 7.0, ..SamplerConfig::default() };
        assert!(bad_alpha.validate().is_err());
        let bad_r = SamplerConfig { r_fractions: vec![0.5], ..SamplerConfig::default() };
        assert!(bad_r.validate().is_err());
        let r = raster_with_field(32, 32, 0..8, 0..8);
        let big = SamplerConfig { patch_size: 40, ..SamplerConfig::default() };
        assert!(matches!(contour_candidates(&r, &big), Err(DataError::PatchTooLarge { .. })));
        let mut no_ids = r.clone();
        no_ids.instances = None;
        let cfg = SamplerConfig { patch_size: 16, ..SamplerConfig::default() };
        assert!(matches!(contour_candidates(&no_ids, &cfg), Err(DataError::MissingInstances)));
    }

    #[test]
    fn default_rotation_set_is_five_to_one_eighty() {
        let cfg = SamplerConfig::default();
        assert_eq!(cfg.rotation_set.len(), 36);
        assert_eq!(cfg.rotation_set[0], 5.0);
        assert_eq!(*cfg.rotation_set.last().unwrap(), 180.0);
    }
}
