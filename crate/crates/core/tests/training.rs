use flowcast::codebook::{build_codebook, hard_decode, quantize, soft_decode, FlowCodebook};
use flowcast::flow::synth::{random_scene, synthesize_sequence, SceneKind};
use flowcast::flow::{augment, cell_means, center_crop_pair, AugmentParams, FlowField, Image};
use flowcast::model::{gradcheck_model, preprocess, train, Model, ModelConfig, TrainOptions};

fn scenes(kind: SceneKind, count: u64, seed: u64) -> Vec<(Image, FlowField)> {
    (0..count)
        .map(|i| {
            let (mut frames, mut flows) =
                synthesize_sequence(&random_scene(kind, 64, 1, seed * 1000 + i)).unwrap();
            (frames.remove(0), flows.remove(0))
        })
        .collect()
}

fn codebook_for(pairs: &[(Image, FlowField)], cfg: &ModelConfig) -> FlowCodebook {
    let mut samples = Vec::new();
    for (img, fl) in pairs {
        let (_, crop) = center_crop_pair(img, fl, cfg.input_size, cfg.input_size).unwrap();
        samples.extend_from_slice(cell_means(&crop, cfg.grid_m, cfg.grid_n).unwrap().data());
    }
    build_codebook(&samples, cfg.clusters, 0, 100).unwrap()
}

fn mirror(f: &FlowField) -> FlowField {
    let mut p = AugmentParams::identity(f.width(), f.height());
    p.flip = true;
    let dummy = Image::new(f.width(), f.height(), 1).unwrap();
    augment(&dummy, f, p).unwrap().1
}

fn mirror_image(img: &Image) -> Image {
    let mut p = AugmentParams::identity(img.width(), img.height());
    p.flip = true;
    let dummy = FlowField::zeros(img.width(), img.height()).unwrap();
    augment(img, &dummy, p).unwrap().0
}

#[test]
fn single_example_overfits() {
    let mut cfg = ModelConfig::tiny();
    cfg.augment = false;
    cfg.sgd.batch = 1;
    cfg.sgd.max_iters = 2000;
    let pairs = scenes(SceneKind::ToneCue, 1, 7);
    let codebook = codebook_for(&scenes(SceneKind::ToneCue, 8, 7), &cfg);
    let mut model = Model::new(cfg.clone(), 3).unwrap();
    let opts = TrainOptions {
        log_every: 50,
        ..Default::default()
    };
    let log = train(&mut model, &pairs, &codebook, &opts, &mut |_| Ok(())).unwrap();
    let first_below = log.iter().find(|r| r.loss < 0.01);
    assert!(
        first_below.is_some(),
        "final loss {}",
        log.last().unwrap().loss
    );

    let (img, fl) = &pairs[0];
    let (_, crop) = center_crop_pair(img, fl, 64, 64).unwrap();
    let labels = quantize(&crop, &codebook, cfg.grid_m, cfg.grid_n).unwrap();
    let grid = model.forward(&preprocess(img, 64).unwrap()).unwrap();
    assert_eq!(hard_decode(&grid), labels);
}

#[test]
fn flipped_inputs_give_mirrored_predictions() {
    let mut cfg = ModelConfig::tiny();
    cfg.augment = true;
    cfg.flip = true;
    cfg.sgd.max_iters = 3000;
    cfg.sgd.batch = 8;
    let pairs = scenes(SceneKind::Converging, 12, 3);
    let codebook = codebook_for(&pairs, &cfg);
    let mut model = Model::new(cfg.clone(), 5).unwrap();
    train(
        &mut model,
        &pairs,
        &codebook,
        &TrainOptions::default(),
        &mut |_| Ok(()),
    )
    .unwrap();

    let mut worst = 0.0f64;
    for (img, _) in &pairs {
        let input = preprocess(img, 64).unwrap();
        let direct = soft_decode(&model.forward(&input).unwrap(), &codebook).unwrap();
        let flipped =
            soft_decode(&model.forward(&mirror_image(&input)).unwrap(), &codebook).unwrap();
        let expected = mirror(&direct);
        let mean: f64 = flipped
            .vectors()
            .zip(expected.vectors())
            .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
            .sum::<f64>()
            / (cfg.grid_m * cfg.grid_n) as f64;
        worst = worst.max(mean);
    }
    assert!(worst < 0.25, "mirror EPE {worst}");
}

#[test]
fn tiny_network_gradients_match_finite_differences() {
    let report = gradcheck_model(&ModelConfig::tiny(), 120, 11).unwrap();
    assert!(report.checked >= 100);
    assert!(report.max_rel_error < 1e-3, "{}", report.max_rel_error);
}
