//! PNG persistence: 8-bit RGB image, 8-bit mask (0/255), 16-bit field ids.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use super::{DataError, LabeledRaster};

/// File names derived from a common stem: `<stem>.image.png`, `<stem>.mask.png`, `<stem>.ids.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterPaths {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub ids: PathBuf,
}

impl RasterPaths {
    pub fn from_stem(stem: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self { image: with(".image.png"), mask: with(".mask.png"), ids: with(".ids.png") }
    }
}

fn encode(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: &[u8],
) -> Result<(), DataError> {
    let malformed =
        |e: png::EncodingError| DataError::Malformed { path: path.display().to_string(), reason: e.to_string() };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(malformed)?;
    writer.write_image_data(data).map_err(malformed)?;
    writer.finish().map_err(malformed)?;
    Ok(())
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded, DataError> {
    let malformed =
        |e: png::DecodingError| DataError::Malformed { path: path.display().to_string(), reason: e.to_string() };
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(malformed)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Malformed { path: path.display().to_string(), reason: "image too large".into() })?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(malformed)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

pub fn write_raster(raster: &LabeledRaster, stem: &Path) -> Result<RasterPaths, DataError> {
    let paths = RasterPaths::from_stem(stem);
    let rgb: Vec<u8> = raster.image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode(&paths.image, raster.width, raster.height, ColorType::Rgb, BitDepth::Eight, &rgb)?;
    let mask: Vec<u8> = raster.mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    encode(&paths.mask, raster.width, raster.height, ColorType::Grayscale, BitDepth::Eight, &mask)?;
    if let Some(ids) = &raster.instances {
        let bytes: Vec<u8> = ids.iter().flat_map(|id| id.to_be_bytes()).collect();
        encode(&paths.ids, raster.width, raster.height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)?;
    }
    Ok(paths)
}

/// Reads a raster written by [`write_raster`]. The id map is optional.
pub fn read_raster(stem: &Path) -> Result<LabeledRaster, DataError> {
    let paths = RasterPaths::from_stem(stem);
    let img = decode(&paths.image)?;
    if img.color != ColorType::Rgb || img.depth != BitDepth::Eight {
        return Err(DataError::Malformed {
            path: paths.image.display().to_string(),
            reason: format!("expected 8-bit RGB, got {:?} {:?}", img.color, img.depth),
        });
    }
    let mask = decode(&paths.mask)?;
    if mask.color != ColorType::Grayscale || mask.depth != BitDepth::Eight {
        return Err(DataError::Malformed {
            path: paths.mask.display().to_string(),
            reason: format!("expected 8-bit grayscale, got {:?} {:?}", mask.color, mask.depth),
        });
    }
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(DataError::DimensionMismatch(format!(
            "image {}×{} vs mask {}×{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    let image = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    let bits = mask.data.iter().map(|&b| u8::from(b >= 128)).collect();
    let mut raster = LabeledRaster::new(img.height, img.width, image, bits)?;
    if paths.ids.exists() {
        let ids = decode(&paths.ids)?;
        if ids.depth != BitDepth::Sixteen || ids.color != ColorType::Grayscale {
            return Err(DataError::Malformed {
                path: paths.ids.display().to_string(),
                reason: "expected 16-bit grayscale".into(),
            });
        }
        if (ids.width, ids.height) != (img.width, img.height) {
            return Err(DataError::DimensionMismatch(format!(
                "image {}×{} vs ids {}×{}",
                img.height, img.width, ids.height, ids.width
            )));
        }
        raster.instances = Some(ids.data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect());
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneSpec};

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            height: 96,
            width: 80,
            field_size_min: 20,
            field_size_max: 30,
            seed: 3,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let stem = dir.path().join("scene");
        write_raster(&scene, &stem).unwrap();
        let back = read_raster(&stem).unwrap();
        assert_eq!(back.mask, scene.mask);
        assert_eq!(back.instances, scene.instances);
        let max_err = back.image.iter().zip(&scene.image).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 255.0, "{max_err}");
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = LabeledRaster::new(4, 4, vec![0.2; 48], vec![0; 16]).unwrap();
        let b = LabeledRaster::new(4, 5, vec![0.2; 60], vec![1; 20]).unwrap();
        write_raster(&a, &dir.path().join("a")).unwrap();
        let pb = write_raster(&b, &dir.path().join("b")).unwrap();
        std::fs::copy(&pb.mask, RasterPaths::from_stem(&dir.path().join("a")).mask).unwrap();
        assert!(matches!(read_raster(&dir.path().join("a")), Err(DataError::DimensionMismatch(_))));
    }

    #[test]
    fn garbage_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let paths = RasterPaths::from_stem(&dir.path().join("x"));
        std::fs::write(&paths.image, b"not a png").unwrap();
        assert!(matches!(read_raster(&dir.path().join("x")), Err(DataError::Malformed { .. })));
    }
}
