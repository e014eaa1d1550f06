//! Registered finite-difference checks covering every differentiable
//! operation, every loss term and the end-to-end network graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    grad_check, AutodiffError, GradCheckReport, Graph, Padding, ReduceKind, ResizeDirection, Tensor, Var,
};
use crate::losses::{self, FLossMode, LossWeights, PcSign};
use crate::network::{self, CountMode, NetworkConfig, VoteSettings};

/// Default tolerance on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, String>>;

pub struct GradCheckCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    builder: Builder,
}

impl GradCheckCase {
    pub fn run(&self, h: f64, tol: f64) -> GradCheckReport {
        grad_check(|g, v| (self.builder)(g, v), &self.inputs, h, tol)
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub report: GradCheckReport,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.0.random_range(lo..hi)).collect()).expect("shape")
    }

    fn labels(&mut self, h: usize, w: usize) -> Tensor {
        let mask: Vec<u8> = (0..h * w).map(|_| self.0.random_range(0..2u8)).collect();
        losses::one_hot_labels(&mask, h, w).expect("shape")
    }
}

/// `Σ y·W` for a fixed random `W`, so every output element matters.
fn project(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var, String> {
    let wv = g.constant(w);
    let prod = g.mul(y, wv).map_err(|e| e.to_string())?;
    Ok(g.sum_all(prod))
}

fn case<F>(name: &'static str, inputs: Vec<Tensor>, f: F) -> GradCheckCase
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, String> + 'static,
{
    GradCheckCase { name, inputs, builder: Box::new(f) }
}

fn s<T, E: ToString>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// A projected unary/binary op: `proj(op(inputs))`.
fn op_case(
    gen: &mut Gen,
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError> + 'static,
) -> GradCheckCase {
    let w = gen.tensor(out_shape, -1.0, 1.0);
    case(name, inputs, move |g, v| {
        let y = s(op(g, v))?;
        project(g, y, &w)
    })
}

/// Every registered check; `inject_bug` appends a deliberately wrong adjoint.
pub fn gradcheck_suite(inject_bug: bool) -> Vec<GradCheckCase> {
    let mut gen = Gen(ChaCha8Rng::seed_from_u64(0x5eed));
    let mut cases = Vec::new();
    let (h, w, k) = (8usize, 8usize, 3usize);

    // elementwise and structural operations
    let a = gen.tensor(&[3, 4], -1.0, 1.0);
    let b_row = gen.tensor(&[4], -1.0, 1.0);
    let pos = gen.tensor(&[3, 4], 0.5, 2.0);
    cases.push(op_case(&mut gen, "add_broadcast", vec![a.clone(), b_row.clone()], &[3, 4], |g, v| g.add(v[0], v[1])));
    cases.push(op_case(&mut gen, "sub", vec![a.clone(), pos.clone()], &[3, 4], |g, v| g.sub(v[0], v[1])));
    cases.push(op_case(&mut gen, "mul_broadcast", vec![a.clone(), b_row.clone()], &[3, 4], |g, v| g.mul(v[0], v[1])));
    cases.push(op_case(&mut gen, "div", vec![a.clone(), pos.clone()], &[3, 4], |g, v| g.div(v[0], v[1])));
    cases.push(op_case(&mut gen, "log", vec![pos.clone()], &[3, 4], |g, v| g.log(v[0])));
    cases.push(op_case(&mut gen, "exp", vec![a.clone()], &[3, 4], |g, v| g.exp(v[0])));
    cases.push(op_case(&mut gen, "sigmoid", vec![a.clone()], &[3, 4], |g, v| g.sigmoid(v[0])));
    cases.push(op_case(&mut gen, "relu", vec![a.clone()], &[3, 4], |g, v| g.relu(v[0])));
    cases.push(op_case(&mut gen, "square", vec![a.clone()], &[3, 4], |g, v| g.square(v[0])));
    cases.push(op_case(&mut gen, "neg", vec![a.clone()], &[3, 4], |g, v| g.neg(v[0])));
    cases.push(op_case(&mut gen, "scale_shift", vec![a.clone()], &[3, 4], |g, v| {
        let y = g.scale(v[0], 2.5);
        Ok(g.shift(y, -0.3))
    }));
    cases.push(op_case(&mut gen, "clamp", vec![a.clone()], &[3, 4], |g, v| Ok(g.clamp(v[0], -0.5, 0.5))));
    cases.push(op_case(&mut gen, "softmax", vec![a.clone()], &[3, 4], |g, v| g.softmax(v[0], 1)));
    cases.push(op_case(&mut gen, "log_softmax", vec![a.clone()], &[3, 4], |g, v| g.log_softmax(v[0], 0)));
    let cube = gen.tensor(&[2, 3, 4], -1.0, 1.0);
    cases.push(op_case(&mut gen, "reduce_sum", vec![cube.clone()], &[3], |g, v| {
        g.reduce(v[0], ReduceKind::Sum, &[0, 2])
    }));
    cases.push(op_case(&mut gen, "reduce_mean", vec![cube.clone()], &[2, 4], |g, v| {
        g.reduce(v[0], ReduceKind::Mean, &[1])
    }));
    cases.push(op_case(&mut gen, "reshape", vec![cube.clone()], &[6, 4], |g, v| g.reshape(v[0], &[6, 4])));
    cases.push(op_case(&mut gen, "select", vec![cube.clone()], &[2, 4], |g, v| g.select(v[0], 1, 2)));
    let other = gen.tensor(&[2, 3, 2], -1.0, 1.0);
    cases.push(op_case(&mut gen, "concat", vec![cube.clone(), other], &[2, 3, 6], |g, v| g.concat(&[v[0], v[1]], 2)));
    cases.push(op_case(&mut gen, "transpose", vec![a.clone()], &[4, 3], |g, v| g.transpose(v[0])));
    let m = gen.tensor(&[4, 2], -1.0, 1.0);
    cases.push(op_case(&mut gen, "matmul", vec![a.clone(), m], &[3, 2], |g, v| g.matmul(v[0], v[1])));
    let img = gen.tensor(&[6, 6, 2], -1.0, 1.0);
    let ker = gen.tensor(&[3, 3, 2, 3], -1.0, 1.0);
    cases.push(op_case(&mut gen, "conv2d_same", vec![img.clone(), ker.clone()], &[6, 6, 3], |g, v| {
        g.conv2d(v[0], v[1], 1, Padding::Same)
    }));
    cases.push(op_case(&mut gen, "conv2d_same_stride2", vec![img.clone(), ker.clone()], &[3, 3, 3], |g, v| {
        g.conv2d(v[0], v[1], 2, Padding::Same)
    }));
    cases.push(op_case(&mut gen, "conv2d_valid_stride2", vec![img.clone(), ker], &[2, 2, 3], |g, v| {
        g.conv2d(v[0], v[1], 2, Padding::Valid)
    }));
    cases.push(op_case(&mut gen, "resize_up", vec![img.clone()], &[12, 12, 2], |g, v| {
        g.resize_nearest(v[0], 2, ResizeDirection::Up)
    }));
    cases.push(op_case(&mut gen, "resize_down", vec![img], &[3, 3, 2], |g, v| {
        g.resize_nearest(v[0], 2, ResizeDirection::Down)
    }));

    // network blocks
    let s_logits = gen.tensor(&[h, w, k], -2.0, 2.0);
    let c_logits = gen.tensor(&[h, w, 2], -2.0, 2.0);
    cases.push(op_case(&mut gen, "segment_softmax", vec![s_logits.clone()], &[h, w, k], |g, v| {
        network::segment_softmax(g, v[0]).map_err(|e| AutodiffError::Shape(e.to_string()))
    }));
    for (name, mode) in [("voting_block_area", CountMode::AreaNormalized), ("voting_block_raw", CountMode::Raw)] {
        let wt = gen.tensor(&[h, w, 2], -1.0, 1.0);
        cases.push(case(name, vec![s_logits.clone(), c_logits.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let c = s(g.softmax(v[1], 2))?;
            let slice = s(g.select(seg, 2, 1))?;
            // raw counts over 64 pixels need a gentler temperature to stay differentiable in practice
            let tau = if mode == CountMode::Raw { 10.0 } else { 0.1 };
            let out = s(network::voting_block(g, slice, c, tau, mode))?;
            project(g, out.mask, &wt)
        }));
    }
    let wt = gen.tensor(&[h, w, 2], -1.0, 1.0);
    cases.push(case("fusion_block", vec![s_logits.clone(), c_logits.clone()], move |g, v| {
        let seg = s(network::segment_softmax(g, v[0]))?;
        let c = s(g.softmax(v[1], 2))?;
        let settings = VoteSettings { segments: k, temperature: 0.1, count_mode: CountMode::AreaNormalized };
        let fused = s(network::fusion_block(g, seg, c, &settings))?;
        project(g, fused, &wt)
    }));

    // loss terms; S and F are kept on their simplices by construction
    let labels = gen.labels(h, w);
    let color = gen.tensor(&[h, w, 3], 0.0, 1.0);
    let position = network::position_channels(h, w);
    let f_logits = gen.tensor(&[h, w, 2], -2.0, 2.0);
    for (name, mode) in
        [("weighted_bce_f_nll", FLossMode::ProbabilityNll), ("weighted_bce_f_sigmoid", FLossMode::SquashedLogits)]
    {
        let labels = labels.clone();
        cases.push(case(name, vec![f_logits.clone()], move |g, v| {
            let f = s(g.softmax(v[0], 2))?;
            let l = g.constant(&labels);
            s(losses::weighted_bce_f(g, f, l, 2.5, mode))
        }));
    }
    {
        let labels = labels.clone();
        cases.push(case("softmax_ce_c", vec![c_logits.clone()], move |g, v| {
            let l = g.constant(&labels);
            s(losses::softmax_ce_c(g, v[0], l))
        }));
    }
    {
        let wt = gen.tensor(&[k, 3], -1.0, 1.0);
        cases.push(case("centroid_features", vec![s_logits.clone(), color.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let cen = s(losses::centroid_features(g, seg, v[1]))?;
            project(g, cen, &wt)
        }));
    }
    {
        let cen = gen.tensor(&[k, 3], 0.0, 1.0);
        let wt = gen.tensor(&[h, w, 3], -1.0, 1.0);
        cases.push(case("reconstruct", vec![s_logits.clone(), cen], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let rec = s(losses::reconstruct(g, seg, v[1]))?;
            project(g, rec, &wt)
        }));
    }
    for (name, mode) in [
        ("label_reconstruction_nll", FLossMode::ProbabilityNll),
        ("label_reconstruction_sigmoid", FLossMode::SquashedLogits),
    ] {
        let labels = labels.clone();
        cases.push(case(name, vec![s_logits.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let l = g.constant(&labels);
            s(losses::label_reconstruction_ce(g, seg, l, mode))
        }));
    }
    cases.push(case("partition_coefficient", vec![s_logits.clone()], |g, v| {
        let seg = s(network::segment_softmax(g, v[0]))?;
        s(losses::partition_coefficient_loss(g, seg))
    }));
    {
        let p = position.clone();
        cases.push(case("granularity_position", vec![s_logits.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let pv = g.constant(&p);
            let cv = g.constant(&p);
            Ok(s(losses::granularity_loss(g, seg, pv, cv))?.0)
        }));
    }
    cases.push(case("granularity_color", vec![s_logits.clone(), color.clone()], |g, v| {
        let seg = s(network::segment_softmax(g, v[0]))?;
        Ok(s(losses::granularity_loss(g, seg, v[1], v[1]))?.1)
    }));
    {
        let labels = labels.clone();
        cases.push(case("label_centric", vec![s_logits.clone(), c_logits.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let c = s(g.softmax(v[1], 2))?;
            let settings = VoteSettings { segments: k, temperature: 0.1, count_mode: CountMode::AreaNormalized };
            let fused = s(network::fusion_block(g, seg, c, &settings))?;
            let l = g.constant(&labels);
            let weights = LossWeights { eta: 2.0, ..LossWeights::default() };
            Ok(s(losses::label_centric_loss(g, fused, v[1], seg, l, &weights))?.total)
        }));
    }
    for (name, sign) in
        [("region_centric", PcSign::ConfidenceEncouraging), ("region_centric_additive_pc", PcSign::Additive)]
    {
        let p = position.clone();
        cases.push(case(name, vec![s_logits.clone(), color.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let pv = g.constant(&p);
            Ok(s(losses::region_centric_loss(g, seg, pv, v[1], sign))?.total)
        }));
    }
    {
        let (labels, p) = (labels.clone(), position.clone());
        cases.push(case("total_loss", vec![s_logits.clone(), c_logits.clone(), color.clone()], move |g, v| {
            let seg = s(network::segment_softmax(g, v[0]))?;
            let c = s(g.softmax(v[1], 2))?;
            let settings = VoteSettings { segments: k, temperature: 0.1, count_mode: CountMode::AreaNormalized };
            let fused = s(network::fusion_block(g, seg, c, &settings))?;
            let (l, pv) = (g.constant(&labels), g.constant(&p));
            let weights = LossWeights { eta: 3.0, lambda_c: 0.7, lambda_r: 1.3, ..LossWeights::default() };
            Ok(s(losses::total_loss(g, fused, v[1], seg, l, pv, v[2], &weights))?.total)
        }));
    }

    // end to end: image → backbone → F → total loss, image and all parameters checked
    {
        let config =
            NetworkConfig { segments: k, height: h, width: w, widths: [2, 3, 3, 3], ..NetworkConfig::default() };
        let params = network::init_params(&config, 11);
        let mut inputs = vec![color.clone()];
        inputs.extend(params.iter().map(|(_, t)| {
            // non-zero biases so that no ReLU input sits exactly on its kink
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|x| *x += gen.0.random_range(-0.05..0.05));
            t
        }));
        let labels = labels.clone();
        cases.push(case("end_to_end", inputs, move |g, v| {
            let out = s(network::forward(g, v[0], &config, &v[1..]))?;
            let l = g.constant(&labels);
            let pv = g.constant(&network::position_channels(h, w));
            let weights = LossWeights { eta: 2.0, ..LossWeights::default() };
            Ok(s(losses::total_loss(g, out.fused, out.c_logits, out.segments, l, pv, v[0], &weights))?.total)
        }));
    }

    if inject_bug {
        let x = gen.tensor(&[3, 4], -1.0, 1.0);
        cases.push(op_case(&mut gen, "injected_faulty_square", vec![x], &[3, 4], |g, v| Ok(g.faulty_square(v[0]))));
    }
    cases
}

/// Runs every case at step `h` and tolerance `tol`.
pub fn run_gradcheck_suite(inject_bug: bool, h: f64, tol: f64) -> Vec<CheckOutcome> {
    gradcheck_suite(inject_bug).into_iter().map(|c| CheckOutcome { name: c.name, report: c.run(h, tol) }).collect()
}

/// `check,max_rel_error,checked,passed` CSV.
pub fn gradcheck_csv(outcomes: &[CheckOutcome]) -> String {
    let mut out = String::from("check,max_rel_error,checked,passed\n");
    for o in outcomes {
        out.push_str(&format!("{},{:.3e},{},{}\n", o.name, o.report.max_rel_error, o.report.checked, o.report.passed));
    }
    out
}
