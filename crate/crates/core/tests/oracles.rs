use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use votenet::autodiff::{Graph, Tensor, Var};
use votenet::losses::{self, FLossMode, LossWeights, PcSign, PixelFeatures};
use votenet::network::{voting_block, CountMode, NetworkConfig, VoteNet};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn simplex(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> Tensor {
    let mut data = Vec::new();
    for _ in 0..h * w {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::new(&[h, w, k], data).unwrap()
}

struct Instance {
    fused: Tensor,
    c_logits: Tensor,
    segments: Tensor,
    labels: Tensor,
    mask: Vec<u8>,
    features: PixelFeatures,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, k) = (8, 8, 3);
    let mask: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
    let image = rand_tensor(&mut rng, &[h, w, 3], 0.0, 1.0);
    Instance {
        fused: simplex(&mut rng, h, w, 2),
        c_logits: rand_tensor(&mut rng, &[h, w, 2], -2.0, 2.0),
        segments: simplex(&mut rng, h, w, k),
        labels: losses::one_hot_labels(&mask, h, w).unwrap(),
        mask,
        features: PixelFeatures::from_image(&image).unwrap(),
    }
}

fn total(inst: &Instance, weights: &LossWeights) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let bind = |g: &mut Graph, t: &Tensor| -> Var { g.constant(t) };
    let (f, c, s, l) = (
        bind(&mut g, &inst.fused),
        bind(&mut g, &inst.c_logits),
        bind(&mut g, &inst.segments),
        bind(&mut g, &inst.labels),
    );
    let (p, col) = (bind(&mut g, &inst.features.position), bind(&mut g, &inst.features.color));
    let b = losses::total_loss(&mut g, f, c, s, l, p, col, weights).unwrap();
    (g.item(b.total).unwrap(), g.item(b.label.total).unwrap(), g.item(b.region.total).unwrap())
}

#[test]
fn weighted_bce_matches_direct_formula() {
    for seed in 0..10 {
        let inst = instance(seed);
        for eta in [1.0, 2.0, 4.0] {
            let mut g = Graph::new();
            let f = g.constant(&inst.fused);
            let l = g.constant(&inst.labels);
            let v = losses::weighted_bce_f(&mut g, f, l, eta, FLossMode::ProbabilityNll).unwrap();
            let mut expected = 0.0;
            for (px, &m) in inst.fused.data().chunks_exact(2).zip(&inst.mask) {
                let p = px[1].clamp(1e-7, 1.0 - 1e-7);
                expected += if m == 1 { -eta * p.ln() } else { -(1.0 - p).ln() };
            }
            expected /= inst.mask.len() as f64;
            assert!((g.item(v).unwrap() - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn doubling_eta_doubles_only_the_contour_term() {
    let inst = instance(3);
    let value = |eta: f64| {
        let mut g = Graph::new();
        let f = g.constant(&inst.fused);
        let l = g.constant(&inst.labels);
        let v = losses::weighted_bce_f(&mut g, f, l, eta, FLossMode::ProbabilityNll).unwrap();
        g.item(v).unwrap()
    };
    let (l0, l1, l2) = (value(1e-300), value(1.0), value(2.0));
    let positive = l1 - l0;
    assert!(positive > 0.0);
    assert!((l2 - (l0 + 2.0 * positive)).abs() < 1e-12);
}

#[test]
fn loss_composition_is_additive_and_scale_equivariant() {
    for seed in 0..8 {
        let inst = instance(seed);
        for (pc_sign, mode) in
            [(PcSign::ConfidenceEncouraging, FLossMode::ProbabilityNll), (PcSign::Additive, FLossMode::SquashedLogits)]
        {
            let base = LossWeights { eta: 2.0, lambda_c: 0.7, lambda_r: 1.3, pc_sign, f_loss_mode: mode };
            let (t, lc, lr) = total(&inst, &base);
            assert!((t - (0.7 * lc + 1.3 * lr)).abs() < 1e-12);
            let doubled = LossWeights { lambda_c: 1.4, lambda_r: 2.6, ..base };
            assert!((total(&inst, &doubled).0 - 2.0 * t).abs() < 1e-12);
            let label_only = LossWeights { lambda_c: 1.0, lambda_r: 0.0, ..base };
            assert_eq!(total(&inst, &label_only).0, lc);

            // label-centric term is the sum of its three parts
            let mut g = Graph::new();
            let f = g.constant(&inst.fused);
            let c = g.constant(&inst.c_logits);
            let s = g.constant(&inst.segments);
            let l = g.constant(&inst.labels);
            let terms = losses::label_centric_loss(&mut g, f, c, s, l, &base).unwrap();
            let parts =
                g.item(terms.fused_bce).unwrap() + g.item(terms.class_ce).unwrap() + g.item(terms.label_recon).unwrap();
            assert!((g.item(terms.total).unwrap() - parts).abs() < 1e-12);
        }
    }
}

#[test]
fn hard_segments_on_piecewise_constant_image() {
    // two vertical halves, each a constant colour
    let (h, w, k) = (4, 6, 2);
    let seg: Vec<usize> = (0..h * w).map(|p| usize::from(p % w >= 3)).collect();
    let s = Tensor::new(&[h, w, k], seg.iter().flat_map(|&i| if i == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect())
        .unwrap();
    let image = Tensor::new(
        &[h, w, 3],
        seg.iter().flat_map(|&i| if i == 0 { [0.2, 0.4, 0.6] } else { [0.9, 0.1, 0.3] }).collect(),
    )
    .unwrap();
    let feats = PixelFeatures::from_image(&image).unwrap();
    let mut g = Graph::new();
    let sv = g.constant(&s);
    let p = g.constant(&feats.position);
    let c = g.constant(&feats.color);
    let r = losses::region_centric_loss(&mut g, sv, p, c, PcSign::ConfidenceEncouraging).unwrap();
    let color = g.item(r.color).unwrap();
    assert!(color < 1e-12, "colour error {color}");
    let pos = g.item(r.position).unwrap();
    assert!(pos > 0.0);
    assert!((g.item(r.total).unwrap() - (pos + color - 1.0 / k as f64)).abs() < 1e-12);
}

#[test]
fn six_pixel_segment_votes_contour_in_the_cold_limit() {
    // 4 contour and 2 background pixels inside the segment, others outside
    let seg = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let contour = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let mut g = Graph::new();
    let s = g.constant(&Tensor::new(&[3, 3], seg.to_vec()).unwrap());
    let c = g.constant(&Tensor::new(&[3, 3, 2], contour.iter().flat_map(|&x| [1.0 - x, x]).collect()).unwrap());
    let v = voting_block(&mut g, s, c, 1e-3, CountMode::Raw).unwrap();
    assert_eq!(g.value(v.counts), &[2.0, 4.0]);
    assert!(g.value(v.probs)[1] > 1.0 - 1e-12);
    let mask = g.value(v.mask);
    assert!(mask.chunks_exact(2).zip(&seg).all(|(m, &si)| m[0] <= si && m[1] <= si));
}

#[test]
fn raising_contour_evidence_never_lowers_the_contour_vote() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [CountMode::Raw, CountMode::AreaNormalized] {
        for _ in 0..40 {
            let s = rand_tensor(&mut rng, &[4, 4], 0.0, 1.0);
            let contour: Vec<f64> = (0..16).map(|_| rng.random_range(0.05..0.95)).collect();
            let vote = |contour: &[f64]| {
                let mut g = Graph::new();
                let sv = g.constant(&s);
                let cv =
                    g.constant(&Tensor::new(&[4, 4, 2], contour.iter().flat_map(|&x| [1.0 - x, x]).collect()).unwrap());
                let v = voting_block(&mut g, sv, cv, 0.5, mode).unwrap();
                g.value(v.probs)[1]
            };
            let before = vote(&contour);
            let mut bumped = contour.clone();
            let px = rng.random_range(0..16);
            bumped[px] = (bumped[px] + 0.04).min(1.0);
            assert!(vote(&bumped) >= before);
        }
    }
}

#[test]
fn forward_shapes_and_deterministic_replay() {
    let cfg = NetworkConfig { height: 64, width: 64, ..NetworkConfig::default() };
    let a = VoteNet::new(cfg.clone(), 9).unwrap();
    let b = VoteNet::new(cfg, 9).unwrap();
    let image = Tensor::new(&[64, 64, 3], (0..64 * 64 * 3).map(|i| ((i * 37) % 101) as f64 / 101.0).collect()).unwrap();
    let (pa, pb) = (a.predict(&image).unwrap(), b.predict(&image).unwrap());
    assert_eq!(pa.segments.shape(), &[64, 64, 10]);
    assert_eq!(pa.c_probs.shape(), &[64, 64, 2]);
    assert_eq!(pa.fused.shape(), &[64, 64, 2]);
    assert_eq!(pa.fused.data(), pb.fused.data());
    assert!(pa.fused.is_finite());
}
