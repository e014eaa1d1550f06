use crate::autodiff::Tensor;
use crate::network::{VoteNet, CLASS_COUNT};

use super::InferenceError;

/// What happens when the stride grid does not end exactly at the image edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TileEdge {
    /// Append a final window flush with the edge, so every pixel is covered.
    #[default]
    Clamp,
    /// Keep only the regular grid; trailing pixels may stay uncovered.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub edge: TileEdge,
    /// Top-left corners `(row, col)` in raster order.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(n: usize, window: usize, stride: usize, edge: TileEdge) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=n - window).step_by(stride).collect();
    let last = *out.last().expect("window fits");
    if edge == TileEdge::Clamp && last + window < n {
        out.push(n - window);
    }
    out
}

/// Clamped plan: full coverage, final row/column windows flush with the edge.
pub fn plan_tiles(height: usize, width: usize, window: usize, stride: usize) -> Result<TilePlan, InferenceError> {
    plan_tiles_with(height, width, window, stride, TileEdge::Clamp)
}

pub fn plan_tiles_with(
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
    edge: TileEdge,
) -> Result<TilePlan, InferenceError> {
    if stride == 0 {
        return Err(InferenceError::ZeroStride);
    }
    if window == 0 || window > height || window > width {
        return Err(InferenceError::WindowTooLarge { window, height, width });
    }
    let rows = axis_origins(height, window, stride, edge);
    let cols = axis_origins(width, window, stride, edge);
    let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TilePlan { height, width, window, stride, edge, origins })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Per-pixel number of windows covering it.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.height * self.width];
        for &(r, c) in &self.origins {
            for y in r..r + self.window {
                cov[y * self.width + c..y * self.width + c + self.window].iter_mut().for_each(|v| *v += 1);
            }
        }
        cov
    }
}

/// Output of one window: class probabilities `w×w×2` and, optionally, a hard
/// segment id per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    pub probs: Vec<f64>,
    pub segments: Option<Vec<u32>>,
}

/// Anything that maps a square `w×w×3` window to class probabilities.
pub trait WindowModel: Sync {
    fn window(&self) -> usize;
    fn predict_window(&self, window: &Tensor) -> Result<WindowOutput, InferenceError>;
}

impl WindowModel for VoteNet {
    fn window(&self) -> usize {
        self.config.height
    }

    fn predict_window(&self, window: &Tensor) -> Result<WindowOutput, InferenceError> {
        let pred = self.predict(window)?;
        let k = self.config.segments;
        let segments = pred
            .segments
            .data()
            .chunks_exact(k)
            .map(|s| {
                // first maximum wins, matching the usual argmax convention
                let mut best = 0;
                for (i, &v) in s.iter().enumerate() {
                    if v > s[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect();
        Ok(WindowOutput { probs: pred.fused.into_data(), segments: Some(segments) })
    }
}

/// Accumulated window probabilities with per-pixel coverage counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub height: usize,
    pub width: usize,
    /// Sum of window probabilities, `H×W×2`.
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
    /// Segment ids taken from the window whose centre is nearest each pixel,
    /// as `window_index << 32 | local_id` so ids never collide across windows.
    pub segments: Option<Vec<u64>>,
}

impl PredictionMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sums: vec![0.0; height * width * CLASS_COUNT],
            counts: vec![0; height * width],
            segments: None,
        }
    }

    pub fn add_window(&mut self, origin: (usize, usize), window: usize, probs: &[f64]) {
        for y in 0..window {
            for x in 0..window {
                let dst = (origin.0 + y) * self.width + origin.1 + x;
                let src = y * window + x;
                for c in 0..CLASS_COUNT {
                    self.sums[dst * CLASS_COUNT + c] += probs[src * CLASS_COUNT + c];
                }
                self.counts[dst] += 1;
            }
        }
    }

    /// Mean probabilities `H×W×2`; uncovered pixels stay zero.
    pub fn probabilities(&self) -> Vec<f64> {
        self.sums
            .chunks_exact(CLASS_COUNT)
            .zip(&self.counts)
            .flat_map(|(s, &n)| {
                let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
                s.iter().map(move |v| v * inv)
            })
            .collect()
    }

    /// Per-pixel argmax; ties go to background.
    pub fn hard_labels(&self) -> Vec<u8> {
        self.sums.chunks_exact(CLASS_COUNT).map(|s| u8::from(s[1] > s[0])).collect()
    }
}

/// Runs `model` over every window of `plan` and averages overlapping
/// probabilities. `image` is `H×W×3`.
pub fn predict_image(
    image: &Tensor,
    model: &dyn WindowModel,
    plan: &TilePlan,
) -> Result<PredictionMap, InferenceError> {
    let (h, w) = match *image.shape() {
        [h, w, 3] => (h, w),
        ref s => return Err(InferenceError::PlanMismatch(format!("image must be H×W×3, got {s:?}"))),
    };
    if (h, w) != (plan.height, plan.width) {
        return Err(InferenceError::PlanMismatch(format!(
            "plan is for {}×{}, image is {h}×{w}",
            plan.height, plan.width
        )));
    }
    if model.window() != plan.window {
        return Err(InferenceError::PlanMismatch(format!(
            "model window {} differs from plan window {}",
            model.window(),
            plan.window
        )));
    }
    let win = plan.window;
    let crop = |(r, c): (usize, usize)| {
        let mut data = Vec::with_capacity(win * win * 3);
        for y in r..r + win {
            let start = (y * w + c) * 3;
            data.extend_from_slice(&image.data()[start..start + win * 3]);
        }
        Tensor::new(&[win, win, 3], data).expect("window shape")
    };

    // windows are independent; run them on scoped threads and merge in plan order
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(plan.len().max(1));
    let chunk = plan.len().div_ceil(threads.max(1)).max(1);
    let outputs: Vec<Result<WindowOutput, InferenceError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .origins
            .chunks(chunk)
            .map(|origins| {
                scope.spawn(move || origins.iter().map(|&o| model.predict_window(&crop(o))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("window worker panicked")).collect()
    });

    let mut map = PredictionMap::new(h, w);
    let mut seg_map: Option<Vec<u64>> = None;
    let mut best_dist = vec![usize::MAX; h * w];
    let half = win / 2;
    for (index, (&origin, out)) in plan.origins.iter().zip(outputs).enumerate() {
        let out = out?;
        if out.probs.len() != win * win * CLASS_COUNT {
            return Err(InferenceError::Dimensions(format!(
                "window output has {} values, expected {}",
                out.probs.len(),
                win * win * CLASS_COUNT
            )));
        }
        map.add_window(origin, win, &out.probs);
        if let Some(ids) = out.segments {
            let seg = seg_map.get_or_insert_with(|| vec![0; h * w]);
            for y in 0..win {
                for x in 0..win {
                    let p = (origin.0 + y) * w + origin.1 + x;
                    let d = y.abs_diff(half).max(x.abs_diff(half));
                    if d < best_dist[p] {
                        best_dist[p] = d;
                        seg[p] = (index as u64) << 32 | ids[y * win + x] as u64;
                    }
                }
            }
        }
    }
    if let Some(p) = map.counts.iter().position(|&n| n == 0) {
        return Err(InferenceError::Uncovered(p));
    }
    map.segments = seg_map;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_plan() {
        let p = plan_tiles(512, 512, 512, 512).unwrap();
        assert_eq!(p.origins, vec![(0, 0)]);
    }

    #[test]
    fn clamped_edge_windows() {
        let p = plan_tiles(100, 100, 64, 32).unwrap();
        let axis = [0, 32, 36];
        let expected: Vec<_> = axis.iter().flat_map(|&r| axis.iter().map(move |&c| (r, c))).collect();
        assert_eq!(p.origins, expected);
        assert!(p.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn dropped_edges_give_grid_counts() {
        // a 4992-pixel square scanned by 512-pixel windows
        let counts: Vec<usize> = [64, 128, 256, 512]
            .iter()
            .map(|&s| plan_tiles_with(4992, 4992, 512, s, TileEdge::Drop).unwrap().len())
            .collect();
        assert_eq!(counts, vec![5041, 1296, 324, 81]);
    }

    #[test]
    fn window_too_large() {
        assert!(matches!(plan_tiles(10, 20, 16, 4), Err(InferenceError::WindowTooLarge { .. })));
        assert!(matches!(plan_tiles(10, 20, 4, 0), Err(InferenceError::ZeroStride)));
    }

    struct Constant(usize);

    impl WindowModel for Constant {
        fn window(&self) -> usize {
            self.0
        }
        fn predict_window(&self, window: &Tensor) -> Result<WindowOutput, InferenceError> {
            // contour probability equals the red channel
            let probs = window.data().chunks_exact(3).flat_map(|px| [1.0 - px[0], px[0]]).collect();
            Ok(WindowOutput { probs, segments: None })
        }
    }

    #[test]
    fn overlapping_windows_average() {
        let (h, w) = (4, 6);
        let data: Vec<f64> = (0..h * w * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        let image = Tensor::new(&[h, w, 3], data.clone()).unwrap();
        let plan = plan_tiles(h, w, 4, 2).unwrap();
        let map = predict_image(&image, &Constant(4), &plan).unwrap();
        let probs = map.probabilities();
        for p in 0..h * w {
            assert!((probs[p * 2 + 1] - data[p * 3]).abs() < 1e-12);
            assert!((probs[p * 2] + probs[p * 2 + 1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(map.counts[2], 2);
    }
}
