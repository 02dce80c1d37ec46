use std::path::Path;

use flowcast::codebook::{
    kmeans, quantize, soft_decode, FlowCodebook, FrameCodebook, PredictionGrid,
};
use flowcast::flow::io::{flo_from_bytes, flo_to_bytes, image_from_bytes, image_to_bytes};
use flowcast::flow::synth::{random_scene, synthesize_sequence, SceneKind};
use flowcast::flow::{augment, cell_means, visualize_flow, AugmentParams, FlowField, Image};
use flowcast::metrics::{
    direction_similarity, epe, orientation_similarity, top_n_accuracy, EvalMask,
};
use flowcast::nn::{Checkpoint, NamedTensor, MODEL_MAGIC, MULTIFRAME_MAGIC};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f64) -> FlowField {
    let data = (0..w * h * 2)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    FlowField::from_vec(w, h, data).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize) -> Image {
    let data = (0..w * h * channels).map(|_| rng.gen::<f64>()).collect();
    Image::from_vec(w, h, channels, data).unwrap()
}

fn random_codebook(rng: &mut ChaCha8Rng, c: usize) -> FlowCodebook {
    let mut centers: Vec<[f64; 2]> = Vec::new();
    while centers.len() < c {
        let p = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        if !centers.contains(&p) {
            centers.push(p);
        }
    }
    FlowCodebook::new(centers).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, classes: usize) -> PredictionGrid {
    let mut probs = Vec::with_capacity(rows * cols * classes);
    for _ in 0..rows * cols {
        let raw: Vec<f64> = (0..classes).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|v| v / s));
    }
    PredictionGrid::new(rows, cols, classes, probs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flo_bytes_round_trip(w in 1usize..16, h in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 2).map(|_| rng.gen_range(-50.0f32..50.0) as f64).collect();
        let field = FlowField::from_vec(w, h, data).unwrap();
        let back = flo_from_bytes(&flo_to_bytes(&field), Path::new("mem")).unwrap();
        prop_assert_eq!(back, field);
    }

    #[test]
    fn pnm_bytes_round_trip(w in 1usize..16, h in 1usize..16, rgb in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = if rgb { 3 } else { 1 };
        let data = (0..w * h * ch).map(|_| rng.gen_range(0..=255u8) as f64 / 255.0).collect();
        let image = Image::from_vec(w, h, ch, data).unwrap();
        let back = image_from_bytes(&image_to_bytes(&image), Path::new("mem")).unwrap();
        prop_assert_eq!(back, image);
    }

    #[test]
    fn checkpoint_bytes_round_trip(tensors in 1usize..5, iteration in any::<u64>(), multi in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let magic = if multi { MULTIFRAME_MAGIC } else { MODEL_MAGIC };
        let list: Vec<NamedTensor> = (0..tensors)
            .map(|i| {
                let dims: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..5)).collect();
                let n = dims.iter().product();
                NamedTensor {
                    name: format!("t{i}.weight"),
                    dims,
                    data: (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                }
            })
            .collect();
        let ckpt = Checkpoint::new(magic, iteration, list);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap(), magic, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &ckpt);
        let other = if multi { MODEL_MAGIC } else { MULTIFRAME_MAGIC };
        prop_assert!(Checkpoint::from_bytes(&ckpt.to_bytes().unwrap(), other, Path::new("mem")).is_err());
    }

    #[test]
    fn codebook_text_round_trip(c in 1usize..40, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, c);
        prop_assert_eq!(FlowCodebook::from_text(&cb.to_text(), Path::new("mem")).unwrap(), cb);
        let frames = (0..k).map(|_| (0..3 * 2 * 2).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let fc = FrameCodebook::new(3, 2, frames).unwrap();
        prop_assert_eq!(FrameCodebook::from_text(&fc.to_text(), Path::new("mem")).unwrap(), fc);
    }

    #[test]
    fn quantization_error_is_bounded(c in 4usize..=40, rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_flow(&mut rng, 16, 16, 6.0);
        let cb = random_codebook(&mut rng, c);
        let labels = quantize(&field, &cb, rows, cols).unwrap();
        let means = cell_means(&field, rows, cols).unwrap();
        let decoded = soft_decode(&PredictionGrid::one_hot(&labels, c), &cb).unwrap();
        let mut bound = 0.0f64;
        for (i, (u, v)) in means.vectors().enumerate() {
            let d = |k: usize| (u - cb.centers()[k][0]).hypot(v - cb.centers()[k][1]);
            let assigned = d(labels.labels[i]);
            prop_assert!((0..c).all(|k| assigned <= d(k)));
            bound = bound.max(assigned);
        }
        let e = epe(&decoded, &means, &EvalMask::all(rows, cols)).unwrap().unwrap();
        prop_assert!(e <= bound + 1e-12);
    }

    #[test]
    fn soft_decode_stays_in_hull(c in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, c);
        let grid = random_grid(&mut rng, 3, 4, c);
        let decoded = soft_decode(&grid, &cb).unwrap();
        let r = cb.max_magnitude();
        prop_assert!(decoded.vectors().all(|(u, v)| u.hypot(v) <= r + 1e-12));
    }

    #[test]
    fn kmeans_objective_never_increases(k in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..120).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let km = kmeans(&points, 2, k, seed, 50).unwrap();
        prop_assert!(km.sse_history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].max(1.0)));
        prop_assert_eq!(kmeans(&points, 2, k, seed, 50).unwrap().centers, km.centers);
    }

    #[test]
    fn flip_is_an_involution(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, w, h, 3);
        let fl = random_flow(&mut rng, w, h, 4.0);
        let mut p = AugmentParams::identity(w, h);
        let same = augment(&img, &fl, p).unwrap();
        prop_assert_eq!(&same.0, &img);
        prop_assert_eq!(&same.1, &fl);
        p.flip = true;
        let (i1, f1) = augment(&img, &fl, p).unwrap();
        let (i2, f2) = augment(&i1, &f1, p).unwrap();
        prop_assert_eq!(f1.get(0, 0).0, -f2.get(w - 1, 0).0);
        prop_assert_eq!(i2, img);
        prop_assert_eq!(f2, fl);
    }

    #[test]
    fn random_crop_matches_slice(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(2..14), rng.gen_range(2..14));
        let img = random_image(&mut rng, w, h, 1);
        let fl = random_flow(&mut rng, w, h, 4.0);
        let (cw, ch) = (rng.gen_range(1..=w), rng.gen_range(1..=h));
        let mut p = AugmentParams::random(&mut rng, w, h, cw, ch).unwrap();
        p.flip = false;
        let (ci, cf) = augment(&img, &fl, p).unwrap();
        for y in 0..ch {
            for x in 0..cw {
                prop_assert_eq!(ci.get(x, y, 0), img.get(p.x + x, p.y + y, 0));
                prop_assert_eq!(cf.get(x, y), fl.get(p.x + x, p.y + y));
            }
        }
    }

    #[test]
    fn sprites_warp_onto_next_frame(seed in any::<u64>(), converging in any::<bool>()) {
        let kind = if converging { SceneKind::Converging } else { SceneKind::ToneCue };
        let spec = random_scene(kind, 32, 3, seed);
        let (_, flows) = synthesize_sequence(&spec).unwrap();
        for t in 0..2 {
            for s in &spec.sprites {
                let (vx, vy) = (s.velocity.0 as i64, s.velocity.1 as i64);
                for py in 0..32 {
                    for px in 0..32 {
                        if !s.covers(px, py, t) {
                            continue;
                        }
                        let (qx, qy) = (px as i64 + vx, py as i64 + vy);
                        if (0..32).contains(&qx) && (0..32).contains(&qy) {
                            prop_assert!(s.covers(qx as usize, qy as usize, t + 1));
                        }
                    }
                }
            }
            for py in 0..32 {
                for px in 0..32 {
                    let top = spec.sprites.iter().rev().find(|s| s.covers(px, py, t));
                    let want = top.map_or((0.0, 0.0), |s| s.velocity);
                    prop_assert_eq!(flows[t].get(px, py), want);
                }
            }
        }
    }

    #[test]
    fn metric_ranges(c in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_flow(&mut rng, 5, 4, 3.0);
        let gt = random_flow(&mut rng, 5, 4, 3.0);
        let cells = (0..20).map(|_| rng.gen_bool(0.6)).collect();
        let mask = EvalMask { rows: 4, cols: 5, cells, kind: flowcast::metrics::MaskKind::All };
        if let Some(e) = epe(&pred, &gt, &mask).unwrap() {
            prop_assert!(e >= 0.0);
            let d = direction_similarity(&pred, &gt, &mask).unwrap().unwrap();
            let o = orientation_similarity(&pred, &gt, &mask).unwrap().unwrap();
            prop_assert!((-1.0..=1.0).contains(&d));
            prop_assert!((0.0..=1.0).contains(&o) && o >= d.abs() - 1e-12);
        }
        let grid = random_grid(&mut rng, 4, 5, c);
        let labels = flowcast::codebook::QuantizedLabelGrid::new(
            4, 5, (0..20).map(|_| rng.gen_range(0..c)).collect(), c).unwrap();
        let all = EvalMask::all(4, 5);
        let accs: Vec<f64> = (1..=c)
            .map(|n| top_n_accuracy(&grid, &labels, n, &all).unwrap().unwrap())
            .collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(accs[c - 1], 1.0);
    }

    #[test]
    fn equal_magnitudes_share_saturation(m in 0.1f64..5.0, a in 0.0f64..std::f64::consts::TAU, b in 0.0f64..std::f64::consts::TAU) {
        let field = FlowField::from_vec(2, 1, vec![m * a.cos(), m * a.sin(), m * b.cos(), m * b.sin()]).unwrap();
        let img = visualize_flow(&field, Some(5.0));
        let sat = |x: usize| {
            let px: Vec<f64> = (0..3).map(|c| img.get(x, 0, c)).collect();
            let hi = px.iter().cloned().fold(f64::MIN, f64::max);
            let lo = px.iter().cloned().fold(f64::MAX, f64::min);
            hi - lo
        };
        prop_assert!((sat(0) - sat(1)).abs() < 0.02);
    }
}

#[test]
fn zero_flow_renders_white() {
    let img = visualize_flow(&FlowField::zeros(4, 3).unwrap(), None);
    assert!(img.data().iter().all(|&v| v == 1.0));
}
