use proptest::prelude::*;

use votenet::autodiff::{Graph, Tensor};
use votenet::config::{EtaSetting, RunConfig};
use votenet::data::{read_manifest, write_manifest, ManifestRow, PatchClass};
use votenet::inference::{
    compute_metrics, connected_components, majority_vote_postprocess, plan_tiles, plan_tiles_with, TileEdge,
};
use votenet::losses;
use votenet::network::{fusion_block, segment_softmax, CountMode, VoteSettings};

fn simplex(raw: &[f64], k: usize) -> Vec<f64> {
    raw.chunks_exact(k)
        .flat_map(|px| {
            let s: f64 = px.iter().sum();
            px.iter().map(move |v| v / s).collect::<Vec<_>>()
        })
        .collect()
}

/// Independent flood fill: number of 4-connected equal-label regions.
fn region_count(labels: &[u8], h: usize, w: usize) -> usize {
    let mut seen = vec![false; labels.len()];
    let mut count = 0;
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            let mut push = |q: usize| {
                if !seen[q] && labels[q] == labels[p] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if r > 0 {
                push(p - w);
            }
            if r + 1 < h {
                push(p + w);
            }
            if c > 0 {
                push(p - 1);
            }
            if c + 1 < w {
                push(p + 1);
            }
        }
    }
    count
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn segment_softmax_is_a_simplex(k in 2usize..7, logits in prop::collection::vec(-30.0f64..30.0, 6 * 5 * 6)) {
        let t = Tensor::new(&[6, 5, k], logits[..30 * k].to_vec()).unwrap();
        let mut g = Graph::new();
        let v = g.constant(&t);
        let s = segment_softmax(&mut g, v).unwrap();
        for px in g.value(s).chunks_exact(k) {
            prop_assert!(px.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fused_channels_sum_to_one(
        k in 1usize..6,
        s_raw in prop::collection::vec(0.001f64..1.0, 4 * 4 * 5),
        c_raw in prop::collection::vec(0.001f64..1.0, 4 * 4 * 2),
        raw_mode in any::<bool>(),
    ) {
        let s = Tensor::new(&[4, 4, k], simplex(&s_raw[..16 * k], k)).unwrap();
        let c = Tensor::new(&[4, 4, 2], simplex(&c_raw, 2)).unwrap();
        let mut g = Graph::new();
        let (sv, cv) = (g.constant(&s), g.constant(&c));
        let settings = if raw_mode {
            VoteSettings { segments: k, temperature: 5.0, count_mode: CountMode::Raw }
        } else {
            VoteSettings { segments: k, temperature: 0.1, count_mode: CountMode::AreaNormalized }
        };
        let f = fusion_block(&mut g, sv, cv, &settings).unwrap();
        for px in g.value(f).chunks_exact(2) {
            prop_assert!((px[0] + px[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_coefficient_within_bounds(k in 1usize..8, raw in prop::collection::vec(0.0001f64..1.0, 3 * 3 * 8)) {
        let s = Tensor::new(&[3, 3, k], simplex(&raw[..9 * k], k)).unwrap();
        let mut g = Graph::new();
        let v = g.constant(&s);
        let pc = losses::partition_coefficient_loss(&mut g, v).unwrap();
        let pc = g.item(pc).unwrap();
        let kf = k as f64;
        prop_assert!(pc >= 1.0 / (kf * kf) - 1e-12 && pc <= 1.0 / kf + 1e-12);
    }

    #[test]
    fn gradients_are_linear_in_the_root(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        // d(a·f + b·g) = a·df + b·dg
        let t = Tensor::new(&[2, 3], x).unwrap();
        let grads = |wa: f64, wb: f64| {
            let mut gr = Graph::new();
            let v = gr.variable(&t);
            let f = gr.sigmoid(v).unwrap();
            let f = gr.sum_all(f);
            let sq = gr.square(v).unwrap();
            let e = gr.exp(sq).unwrap();
            let h = gr.mean_all(e);
            let f = gr.scale(f, wa);
            let h = gr.scale(h, wb);
            let root = gr.add(f, h).unwrap();
            gr.backward(root).unwrap().wrt(v)
        };
        let (ga, gb, gab) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(a, b));
        for i in 0..6 {
            prop_assert!((gab[i] - (a * ga[i] + b * gb[i])).abs() < 1e-9 * (1.0 + gab[i].abs()));
        }
    }

    #[test]
    fn metrics_invariants(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let m = compute_metrics(&pred, &truth).unwrap();
        let swapped = compute_metrics(&truth, &pred).unwrap();
        prop_assert!((m.accuracy - swapped.accuracy).abs() < 1e-12);
        prop_assert!((m.f1 - swapped.f1).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&m.accuracy) && (0.0..=1.0).contains(&m.ber) && (0.0..=100.0).contains(&m.f1));
        let c = m.confusion;
        prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, pred.len());
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert!((m.accuracy - 100.0 * correct as f64 / pred.len() as f64).abs() < 1e-9);
        let perfect = compute_metrics(&truth, &truth).unwrap();
        prop_assert_eq!(perfect.accuracy, 100.0);
        prop_assert_eq!(perfect.ber, 0.0);
    }

    #[test]
    fn clamped_tiles_cover_every_pixel(h in 8usize..80, w in 8usize..80, window in 1usize..40, stride in 1usize..50) {
        prop_assume!(window <= h && window <= w);
        let plan = plan_tiles(h, w, window, stride).unwrap();
        let coverage = plan.coverage();
        if stride <= window {
            prop_assert!(coverage.iter().all(|&c| c >= 1));
        }
        // the last row and column always end flush with the edge
        prop_assert!(coverage[h * w - 1] >= 1);
        prop_assert!(plan.origins.iter().all(|&(r, c)| r + window <= h && c + window <= w));
        let drop = plan_tiles_with(h, w, window, stride, TileEdge::Drop).unwrap();
        let rows = (h - window) / stride + 1;
        let cols = (w - window) / stride + 1;
        prop_assert_eq!(drop.len(), rows * cols);
        prop_assert!(plan.len() >= drop.len());
    }

    #[test]
    fn components_partition_the_image(h in 1usize..12, w in 1usize..12, seed in prop::collection::vec(0u8..3, 144)) {
        let labels = &seed[..h * w];
        let set = connected_components(labels, h, w, 1);
        prop_assert_eq!(set.components.len(), region_count(labels, h, w));
        let mut owner = vec![0usize; h * w];
        for comp in &set.components {
            prop_assert_eq!(comp.area, comp.pixels.len());
            let l = labels[comp.pixels[0]];
            for &p in &comp.pixels {
                prop_assert_eq!(labels[p], l);
                owner[p] += 1;
            }
        }
        prop_assert!(owner.iter().all(|&o| o == 1));
    }

    #[test]
    fn majority_vote_is_idempotent(labels in prop::collection::vec(0u8..2, 64), cuts in prop::collection::vec(0usize..64, 0..6)) {
        let mut bounds: Vec<usize> = cuts;
        bounds.extend([0, 64]);
        bounds.sort_unstable();
        bounds.dedup();
        let segments: Vec<Vec<usize>> = bounds.windows(2).map(|b| (b[0]..b[1]).collect()).collect();
        let once = majority_vote_postprocess(&labels, &segments).unwrap();
        let twice = majority_vote_postprocess(&once, &segments).unwrap();
        prop_assert_eq!(&once, &twice);
        for seg in &segments {
            prop_assert!(seg.iter().all(|&p| once[p] == once[seg[0]]));
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), eta in prop::option::of(0.1f64..20.0), lc in 0.0f64..3.0, stride in 1usize..64) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.loss.eta = eta.map_or(EtaSetting::default(), EtaSetting::Fixed);
        cfg.loss.lambda_c = lc;
        cfg.eval.stride = stride;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn manifest_round_trips(rows in prop::collection::vec(
        ("[a-z0-9_]{1,12}", "[a-z0-9_]{1,12}", -500i64..500, -500i64..500, 0u32..37, any::<bool>()),
        0..20,
    )) {
        let rows: Vec<ManifestRow> = rows
            .into_iter()
            .map(|(id, scene, x, y, rot, contour)| ManifestRow {
                path: format!("patches/{id}").into(),
                patch_id: id,
                source_scene: scene,
                center_x: x,
                center_y: y,
                rotation_deg: 5.0 * rot as f64,
                class: if contour { PatchClass::Contour } else { PatchClass::Background },
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        write_manifest(&path, &rows).unwrap();
        prop_assert_eq!(read_manifest(&path).unwrap(), rows);
    }
}

#[test]
fn tile_counts_match_reference_layouts() {
    // 512-px windows over a 4992-px image with trailing partial windows dropped
    let window_oracle = |n: usize, win: usize, s: usize| {
        let (mut k, mut o) = (0, 0);
        while o + win <= n {
            k += 1;
            o += s;
        }
        k * k
    };
    for (stride, expected) in [(64, 5041), (128, 1296), (256, 324), (512, 81)] {
        let plan = plan_tiles_with(4992, 4992, 512, stride, TileEdge::Drop).unwrap();
        assert_eq!(plan.len(), expected);
        assert_eq!(plan.len(), window_oracle(4992, 512, stride));
    }
    // clamped mode on 100 px with a 64-px window adds a flush final window
    let plan = plan_tiles(100, 100, 64, 32).unwrap();
    let rows: Vec<usize> = plan.origins.iter().filter(|o| o.1 == 0).map(|o| o.0).collect();
    assert_eq!(rows, [0, 32, 36]);
}
