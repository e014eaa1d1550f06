use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::data::DataError;

use super::InferenceError;

const GREEN: [f64; 3] = [0.0, 1.0, 0.0];

/// 8-bit RGB with contour pixels alpha-blended towards green.
pub fn overlay_rgb(image: &[f64], labels: &[u8], alpha: f64) -> Result<Vec<u8>, InferenceError> {
    if image.len() != labels.len() * 3 {
        return Err(InferenceError::Dimensions(format!("{} image values for {} labels", image.len(), labels.len())));
    }
    Ok(image
        .chunks_exact(3)
        .zip(labels)
        .flat_map(|(px, &l)| {
            let a = if l > 0 { alpha } else { 0.0 };
            std::array::from_fn::<u8, 3, _>(|c| {
                ((px[c] * (1.0 - a) + GREEN[c] * a).clamp(0.0, 1.0) * 255.0).round() as u8
            })
        })
        .collect())
}

pub fn write_overlay(
    path: &Path,
    height: usize,
    width: usize,
    image: &[f64],
    labels: &[u8],
    alpha: f64,
) -> Result<(), InferenceError> {
    if labels.len() != height * width {
        return Err(InferenceError::Dimensions(format!("{} labels for {height}×{width}", labels.len())));
    }
    let rgb = overlay_rgb(image, labels, alpha)?;
    let malformed =
        |e: png::EncodingError| DataError::Malformed { path: path.display().to_string(), reason: e.to_string() };
    let file = BufWriter::new(File::create(path).map_err(DataError::from)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(malformed)?;
    writer.write_image_data(&rgb).map_err(malformed)?;
    writer.finish().map_err(malformed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blends_only_contour_pixels() {
        let rgb = overlay_rgb(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[0, 1], 0.5).unwrap();
        assert_eq!(rgb, vec![255, 0, 0, 128, 128, 0]);
    }

    #[test]
    fn writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.png");
        write_overlay(&p, 1, 2, &[0.2; 6], &[1, 0], 0.4).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"\x89PNG"));
    }
}
