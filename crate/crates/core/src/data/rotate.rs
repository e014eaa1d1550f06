use super::{DataError, LabeledRaster, Patch};

/// Reflects a coordinate into `[0, n-1]` (mirror about the edge pixel centres).
fn reflect(mut v: f64, n: usize) -> f64 {
    let max = (n - 1) as f64;
    if max == 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    v = v.rem_euclid(period);
    if v > max {
        period - v
    } else {
        v
    }
}

fn exact_sin_cos(deg: f64) -> (f64, f64) {
    let turns = deg.rem_euclid(360.0);
    if turns == 0.0 {
        (0.0, 1.0)
    } else if turns == 90.0 {
        (1.0, 0.0)
    } else if turns == 180.0 {
        (0.0, -1.0)
    } else if turns == 270.0 {
        (-1.0, 0.0)
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Rotates a square raster about its centre: bilinear for the image, nearest
/// for the mask, reflection outside the original support.
pub fn rotate_raster(raster: &LabeledRaster, degrees: f64) -> Result<LabeledRaster, DataError> {
    let n = raster.height;
    if raster.width != n {
        return Err(DataError::NotSquare { height: raster.height, width: raster.width });
    }
    let (sin, cos) = exact_sin_cos(degrees);
    let c = (n as f64 - 1.0) / 2.0;
    let mut image = vec![0.0; n * n * 3];
    let mut mask = vec![0u8; n * n];
    for r in 0..n {
        for col in 0..n {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            // inverse rotation maps the output pixel back into the source
            let sy = reflect(c + cos * dy - sin * dx, n);
            let sx = reflect(c + sin * dy + cos * dx, n);
            let dst = r * n + col;
            let (ny, nx) = (sy.round() as usize, sx.round() as usize);
            mask[dst] = raster.mask[ny.min(n - 1) * n + nx.min(n - 1)];
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for ch in 0..3 {
                let px = |y: usize, x: usize| raster.image[(y * n + x) * 3 + ch];
                let top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                let bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                image[dst * 3 + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(LabeledRaster { height: n, width: n, image, mask, instances: None })
}

/// The original patch followed by one rotated copy per angle in `rotation_set`.
pub fn augment_rotations(patch: &Patch, rotation_set: &[f64]) -> Result<Vec<Patch>, DataError> {
    let mut out = Vec::with_capacity(rotation_set.len() + 1);
    if patch.raster.width != patch.raster.height {
        return Err(DataError::NotSquare { height: patch.raster.height, width: patch.raster.width });
    }
    out.push(patch.clone());
    for &deg in rotation_set {
        let raster = rotate_raster(&patch.raster, deg)?;
        out.push(Patch { rotation_deg: deg, raster, ..patch.clone() });
    }
    Ok(out)
}
