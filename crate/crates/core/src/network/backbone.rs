use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkConfig, NetworkError, CLASS_COUNT, DOWNSAMPLE_FACTOR};
use crate::autodiff::{Graph, Padding, ParamSet, ResizeDirection, Tensor, Var};

/// Parameter names and shapes, in binding order.
pub fn param_layout(config: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let [c0, c1, c2, c3] = config.widths;
    let conv = |name: &str, cin: usize, cout: usize, k: usize| {
        [(format!("{name}.w"), vec![k, k, cin, cout]), (format!("{name}.b"), vec![cout])]
    };
    [
        conv("stem", 3, c0, 3),
        conv("enc1", c0, c1, 3),
        conv("enc2", c1, c2, 3),
        conv("enc3", c2, c3, 3),
        conv("dec2", c3 + c2, c2, 3),
        conv("dec1", c2 + c1, c1, 3),
        conv("dec0", c1 + c0, c0, 3),
        conv("head_s", c0 + 2, config.segments, 1),
        conv("head_c", c0, CLASS_COUNT, 1),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// Uniform fan-in scaled weights (`±sqrt(6 / fan_in)`), zero biases.
pub fn init_params(config: &NetworkConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (name, shape) in param_layout(config) {
        let numel: usize = shape.iter().product();
        let data = if shape.len() == 4 {
            let fan_in = (shape[0] * shape[1] * shape[2]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
        } else {
            vec![0.0; numel]
        };
        params.push(name, Tensor::new(&shape, data).expect("layout shapes are consistent"));
    }
    params
}

/// Normalized pixel coordinates `(i/(H-1), j/(W-1))` as an `H×W×2` tensor.
pub fn position_channels(height: usize, width: usize) -> Tensor {
    let sy = (height.max(2) - 1) as f64;
    let sx = (width.max(2) - 1) as f64;
    let data = (0..height).flat_map(|i| (0..width).flat_map(move |j| [i as f64 / sy, j as f64 / sx])).collect();
    Tensor::new(&[height, width, 2], data).expect("consistent shape")
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneOutput {
    pub s_logits: Var,
    pub c_logits: Var,
}

/// Three stride-2 encoder stages, three nearest-upsampling decoder stages with
/// skip concatenation, and two 1×1 heads. The segment head also sees the pixel
/// coordinates.
pub fn backbone_forward(
    g: &mut Graph,
    image: Var,
    config: &NetworkConfig,
    params: &[Var],
) -> Result<BackboneOutput, NetworkError> {
    let (h, w) = match *g.shape(image) {
        [h, w, 3] => (h, w),
        ref s => return Err(NetworkError::Shape(format!("image must be H×W×3, got {s:?}"))),
    };
    if h % DOWNSAMPLE_FACTOR != 0 || w % DOWNSAMPLE_FACTOR != 0 {
        return Err(NetworkError::Dimensions { height: h, width: w, factor: DOWNSAMPLE_FACTOR });
    }
    let layout = param_layout(config);
    if params.len() != layout.len() {
        return Err(NetworkError::MissingParam(format!("expected {} parameters, got {}", layout.len(), params.len())));
    }
    for ((name, shape), &p) in layout.iter().zip(params) {
        if g.shape(p) != shape.as_slice() {
            return Err(NetworkError::Shape(format!("{name}: expected {shape:?}, got {:?}", g.shape(p))));
        }
    }
    let mut next = params.iter().copied();
    let mut layer = |g: &mut Graph, x: Var, stride: usize, relu: bool| -> Result<Var, NetworkError> {
        let (wt, b) = (next.next().expect("layout checked"), next.next().expect("layout checked"));
        let y = g.conv2d(x, wt, stride, Padding::Same)?;
        let y = g.add(y, b)?;
        Ok(if relu { g.relu(y)? } else { y })
    };

    let x = g.scale(image, 2.0);
    let x = g.shift(x, -1.0);
    let f0 = layer(g, x, 1, true)?;
    let e1 = layer(g, f0, 2, true)?;
    let e2 = layer(g, e1, 2, true)?;
    let e3 = layer(g, e2, 2, true)?;
    let u = g.resize_nearest(e3, 2, ResizeDirection::Up)?;
    let u = g.concat(&[u, e2], 2)?;
    let d2 = layer(g, u, 1, true)?;
    let u = g.resize_nearest(d2, 2, ResizeDirection::Up)?;
    let u = g.concat(&[u, e1], 2)?;
    let d1 = layer(g, u, 1, true)?;
    let u = g.resize_nearest(d1, 2, ResizeDirection::Up)?;
    let u = g.concat(&[u, f0], 2)?;
    let d0 = layer(g, u, 1, true)?;
    let pos = g.constant(&position_channels(h, w));
    let s_in = g.concat(&[d0, pos], 2)?;
    let s_logits = layer(g, s_in, 1, false)?;
    let c_logits = layer(g, d0, 1, false)?;
    Ok(BackboneOutput { s_logits, c_logits })
}
