use std::fmt;
use std::path::{Path, PathBuf};

use flowcast::codebook::{
    build_codebook, build_frame_codebook, subsample, FlowCodebook, FrameCodebook,
};
use flowcast::flow::synth::{write_dataset, DatasetOptions, SceneKind};
use flowcast::flow::{
    cell_means, center_crop_pair, read_flo, read_image, visualize_flow, write_flo, write_image,
};
use flowcast::metrics::{
    evaluate, prepare_items, CannyParams, EvalItem, MetricReport, ModelPredictor, NnPredictor,
    OraclePredictor, Predictor, UniformPredictor,
};
use flowcast::model::{
    gradcheck_model, load_examples, predict as predict_flow, train as train_model, write_loss_log,
    Model, ModelConfig, Preset, TrainOptions,
};
use flowcast::multiframe::{
    coarse_frame, load_sequences, per_step_accuracy, predict_multiframe, sequence_examples,
    train_multiframe, MultiFrameParams, MultiFrameSpec,
};
use flowcast::nn::gradcheck::check_all_layer_kinds;
use flowcast::nn::SgdConfig;
use flowcast::Error;

use crate::{
    CodebookArgs, EvalArgs, FrameCodebookArgs, GradcheckArgs, ModelArgs, NnEvalArgs, PredictArgs,
    PredictMultiArgs, SynthArgs, TrainArgs, TrainMultiArgs, VizArgs,
};

/// Relative error an end-to-end gradient check must stay under.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// A numerical check ran to completion but did not pass.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::InvalidArgument(_)) => 1,
            CliError::Core(Error::NonFinite(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Core(Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn parse_grid(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--grid expects MxN or N, got {text:?}"));
    let parts: Vec<&str> = text.split('x').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<CliResult<Vec<_>>>()?;
    match nums[..] {
        [n] => Ok((n, n)),
        [m, n] => Ok((m, n)),
        _ => Err(bad()),
    }
}

fn parse_topn(text: &str) -> CliResult<Vec<usize>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    CliError::Usage(format!("--topn expects positive integers, got {s:?}"))
                })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--topn is empty".into()));
    }
    Ok(values)
}

/// The config file written next to a checkpoint.
pub fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

/// Preset, then the explicit config (or `fallback` if it exists), then flags.
fn resolve_config(args: &ModelArgs, fallback: Option<&Path>) -> CliResult<ModelConfig> {
    let preset: Preset = args.preset.parse()?;
    let base = ModelConfig::preset(preset);
    let mut cfg = match (&args.config, fallback) {
        (Some(path), _) => ModelConfig::load(path, base)?,
        (None, Some(path)) if path.exists() => ModelConfig::load(path, base)?,
        _ => base,
    };
    if let Some(grid) = &args.grid {
        let (m, n) = parse_grid(grid)?;
        cfg.grid_m = m;
        cfg.grid_n = n;
    }
    if let Some(c) = args.clusters {
        cfg.clusters = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn warn_skipped(skipped: &[String]) {
    for s in skipped {
        eprintln!("warning: skipped {s}");
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "prediction".into())
}

pub fn synth(a: SynthArgs) -> CliResult {
    let kind: SceneKind = a.kind.parse()?;
    let paths = write_dataset(
        &a.out,
        &DatasetOptions {
            kind,
            count: a.count,
            size: a.size,
            label_frames: a.label_frames,
            steps: a.steps,
            frames_per_scene: a.frames_per_scene,
            seed: a.seed,
        },
    )?;
    println!(
        "wrote {} scenes ({} frames each), manifest {}",
        a.count,
        a.frames_per_scene,
        paths.manifest.display()
    );
    if let Some(seq) = paths.sequence_manifest {
        println!("sequence manifest {}", seq.display());
    }
    Ok(())
}

pub fn codebook(a: CodebookArgs) -> CliResult {
    let cfg = resolve_config(&a.model, None)?;
    let loaded = load_examples(&a.manifest, cfg.input_size)?;
    warn_skipped(&loaded.skipped);
    let mut samples = Vec::new();
    for (_, image, flow) in &loaded.pairs {
        let (_, crop) = center_crop_pair(image, flow, cfg.input_size, cfg.input_size)?;
        samples.extend_from_slice(cell_means(&crop, cfg.grid_m, cfg.grid_n)?.data());
    }
    let samples = subsample(&samples, 2, a.max_samples, a.seed);
    let cb = build_codebook(&samples, cfg.clusters, a.seed, a.iters)?;
    cb.save(&a.out)?;
    println!(
        "codebook: {} clusters from {} cell vectors -> {}",
        cb.len(),
        samples.len() / 2,
        a.out.display()
    );
    Ok(())
}

pub fn frame_codebook(a: FrameCodebookArgs) -> CliResult {
    let cfg = resolve_config(&a.model, None)?;
    let records = flowcast::flow::read_manifest(&a.manifest)?;
    let mut frames = Vec::new();
    for rec in &records {
        let image = read_image(&rec.image)?;
        for f in &rec.flows {
            let flow = read_flo(f)?;
            frames.push(coarse_frame(
                &image,
                &flow,
                cfg.input_size,
                cfg.grid_m,
                cfg.grid_n,
            )?);
        }
    }
    let cb = build_frame_codebook(&frames, a.frames, a.seed, a.iters)?;
    cb.save(&a.out)?;
    println!(
        "frame codebook: {} centroids over {} frames of {}x{} -> {}",
        cb.len(),
        frames.len(),
        cfg.grid_m,
        cfg.grid_n,
        a.out.display()
    );
    Ok(())
}

fn save_model(model: &Model, path: &Path) -> flowcast::Result<()> {
    model.save(path)?;
    std::fs::write(sidecar(path), model.config.to_text()).map_err(|source| Error::Io {
        path: sidecar(path),
        source,
    })
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = resolve_config(&a.model, None)?;
    let codebook = FlowCodebook::load(&a.codebook)?;
    if a.model.clusters.is_none() {
        cfg.clusters = codebook.len();
    }
    if let Some(seed) = a.seed {
        cfg.sgd.seed = seed;
    }
    if let Some(iters) = a.iters {
        cfg.sgd.max_iters = iters;
    }
    if let Some(aug) = &a.augment {
        cfg.set("augment", aug)?;
    }
    if let Some(flip) = &a.flip {
        cfg.set("flip", flip)?;
    }
    cfg.validate()?;
    let loaded = load_examples(&a.manifest, cfg.input_size)?;
    warn_skipped(&loaded.skipped);
    let pairs: Vec<_> = loaded.pairs.into_iter().map(|(_, i, f)| (i, f)).collect();
    create_dir(&a.out)?;

    let mut model = Model::new(cfg.clone(), cfg.sgd.seed)?;
    let opts = TrainOptions {
        log_every: a.log_every,
        snapshot_every: a.snapshot_every,
        jobs: a.jobs.max(1),
    };
    let out = a.out.clone();
    let mut snapshot = |m: &Model| {
        let path = out.join(format!("model_iter_{}.ckpt", m.params.iteration));
        save_model(m, &path)
    };
    let log = train_model(&mut model, &pairs, &codebook, &opts, &mut snapshot)?;
    for r in &log {
        println!("iter {:>7}  loss {:.4}  lr {:.3e}", r.iter, r.loss, r.lr);
    }
    let ckpt = a.out.join("model.ckpt");
    save_model(&model, &ckpt)?;
    write_loss_log(&a.out.join("loss.csv"), &log)?;
    println!(
        "trained {} iterations on {} examples -> {}",
        model.params.iteration,
        pairs.len(),
        ckpt.display()
    );
    Ok(())
}

fn load_checkpoint(args: &ModelArgs, checkpoint: &Path) -> CliResult<Model> {
    let cfg = resolve_config(args, Some(&sidecar(checkpoint)))?;
    Ok(Model::load(checkpoint, cfg)?)
}

pub fn predict(a: PredictArgs) -> CliResult {
    let model = load_checkpoint(&a.model, &a.checkpoint)?;
    let codebook = FlowCodebook::load(&a.codebook)?;
    let image = read_image(&a.input)?;
    let pred = predict_flow(&model, &codebook, &image)?;
    create_dir(&a.out)?;
    let stem = file_stem(&a.input);
    let flo = a.out.join(format!("{stem}.flo"));
    let ppm = a.out.join(format!("{stem}.ppm"));
    write_flo(&pred.coarse, &flo)?;
    write_image(&pred.visualization, &ppm)?;
    println!("wrote {} and {}", flo.display(), ppm.display());
    Ok(())
}

fn load_items(
    manifest: &Path,
    codebook: &FlowCodebook,
    cfg: &ModelConfig,
) -> CliResult<Vec<EvalItem>> {
    let mut loaded = load_examples(manifest, cfg.input_size)?;
    warn_skipped(&loaded.skipped);
    // Reports name images as the manifest lists them.
    let base = manifest.parent().unwrap_or(Path::new(""));
    for (path, _, _) in loaded.pairs.iter_mut() {
        if let Ok(rel) = path.strip_prefix(base) {
            *path = rel.to_path_buf();
        }
    }
    Ok(prepare_items(
        &loaded.pairs,
        codebook,
        cfg.input_size,
        cfg.grid_m,
        cfg.grid_n,
        CannyParams::default(),
    )?)
}

fn write_report(report: &MetricReport, out: &Path) -> CliResult {
    create_dir(out)?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("per_image.csv"), &report.per_image_csv())?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    for f in &report.failures {
        eprintln!("warning: {f}");
    }
    Ok(())
}

struct EvalSetup<'a> {
    model_args: &'a ModelArgs,
    manifest: &'a Path,
    codebook: &'a Path,
    checkpoint: &'a Path,
    predictor: &'a str,
    topn: &'a str,
    out: &'a Path,
    train_manifest: &'a Path,
    features: &'a str,
    jobs: usize,
}

fn run_eval(s: EvalSetup<'_>) -> CliResult {
    let topn = parse_topn(s.topn)?;
    let codebook = FlowCodebook::load(s.codebook)?;
    let needs_model =
        s.predictor == "model" || (s.predictor == "nn" && s.features == "penultimate");
    let model = if needs_model {
        Some(load_checkpoint(s.model_args, s.checkpoint)?)
    } else {
        None
    };
    let mut cfg = match &model {
        Some(m) => m.config.clone(),
        None => resolve_config(s.model_args, None)?,
    };
    if model.is_none() && s.model_args.clusters.is_none() {
        cfg.clusters = codebook.len();
    }
    if codebook.len() != cfg.clusters {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "codebook has {} clusters, configuration expects {}",
            codebook.len(),
            cfg.clusters
        ))));
    }
    let items = load_items(s.manifest, &codebook, &cfg)?;
    let report = match s.predictor {
        "model" => {
            let p = ModelPredictor {
                model: model.as_ref().expect("model loaded"),
                codebook: &codebook,
            };
            evaluate(&p, &items, &topn, s.jobs)?
        }
        "oracle" => evaluate(
            &OraclePredictor {
                classes: codebook.len(),
            },
            &items,
            &topn,
            s.jobs,
        )?,
        "uniform" => evaluate(
            &UniformPredictor {
                codebook: &codebook,
            },
            &items,
            &topn,
            s.jobs,
        )?,
        "nn" => {
            let feature_model = match s.features {
                "raw" => None,
                "penultimate" => model.as_ref(),
                other => {
                    return Err(CliError::Usage(format!(
                        "--features expects raw or penultimate, got {other:?}"
                    )))
                }
            };
            let train = load_items(s.train_manifest, &codebook, &cfg)?;
            let depth = topn.iter().copied().max().unwrap_or(1);
            let p = NnPredictor::new(feature_model, &train, depth, codebook.len())?;
            evaluate(&p as &dyn Predictor, &items, &topn, s.jobs)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "--predictor expects model, nn, oracle or uniform, got {other:?}"
            )))
        }
    };
    write_report(&report, s.out)
}

pub fn eval(a: EvalArgs) -> CliResult {
    let _ = a.seed;
    run_eval(EvalSetup {
        model_args: &a.model,
        manifest: &a.manifest,
        codebook: &a.codebook,
        checkpoint: &a.checkpoint,
        predictor: &a.predictor,
        topn: &a.topn,
        out: &a.out,
        train_manifest: &a.train_manifest,
        features: &a.features,
        jobs: a.jobs,
    })
}

pub fn nn_eval(a: NnEvalArgs) -> CliResult {
    run_eval(EvalSetup {
        model_args: &a.model,
        manifest: &a.manifest,
        codebook: &a.codebook,
        checkpoint: &a.checkpoint,
        predictor: "nn",
        topn: &a.topn,
        out: &a.out,
        train_manifest: &a.train_manifest,
        features: &a.features,
        jobs: a.jobs,
    })
}

pub fn viz(a: VizArgs) -> CliResult {
    if !(a.max_flow >= 0.0) {
        return Err(CliError::Usage("--max-flow must be >= 0".into()));
    }
    let field = read_flo(&a.input)?;
    let scale = (a.max_flow > 0.0).then_some(a.max_flow);
    write_image(&visualize_flow(&field, scale), &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn train_multi(a: TrainMultiArgs) -> CliResult {
    let model = load_checkpoint(&a.model, &a.checkpoint)?;
    let codebook = FrameCodebook::load(&a.codebook)?;
    let sequences = load_sequences(&a.manifest, a.steps)?;
    warn_skipped(&sequences.skipped);
    let spec = MultiFrameSpec::new(
        a.steps,
        a.hidden,
        codebook.len(),
        model.config.feature_width()?,
    )?;
    let examples = sequence_examples(&model, &sequences, &codebook, &spec)?;
    let mut params = MultiFrameParams::init(spec, a.seed)?;
    let sgd = SgdConfig {
        base_lr: a.lr,
        stepsize: a.stepsize,
        gamma: 0.1,
        batch: a.batch,
        max_iters: a.iters,
        seed: a.seed,
        momentum: 0.0,
        weight_decay: 0.0,
    };
    let log = train_multiframe(&mut params, &examples, sgd, a.log_every)?;
    for r in &log {
        println!("iter {:>7}  loss {:.4}  lr {:.3e}", r.iter, r.loss, r.lr);
    }
    create_dir(&a.out)?;
    let ckpt = a.out.join("multiframe.ckpt");
    params.save(&ckpt)?;
    write_loss_log(&a.out.join("multi_loss.csv"), &log)?;
    let acc = per_step_accuracy(&params, &examples)?;
    let acc: Vec<String> = acc.iter().map(|v| format!("{v:.3}")).collect();
    println!("training accuracy per step: {}", acc.join(" "));
    println!("wrote {}", ckpt.display());
    Ok(())
}

pub fn predict_multi(a: PredictMultiArgs) -> CliResult {
    let model = load_checkpoint(&a.model, &a.checkpoint)?;
    let params = MultiFrameParams::load(&a.multi_checkpoint)?;
    let codebook = FrameCodebook::load(&a.codebook)?;
    let image = read_image(&a.input)?;
    let pred = predict_multiframe(&model, &params, &codebook, &image)?;
    create_dir(&a.out)?;
    let stem = file_stem(&a.input);
    let mut listing = String::from("step,frame,probability\n");
    for (t, ((flow, viz), (&k, probs))) in pred
        .flows
        .iter()
        .zip(&pred.visualizations)
        .zip(pred.frames.iter().zip(&pred.probs))
        .enumerate()
    {
        write_flo(flow, &a.out.join(format!("{stem}_step{}.flo", t + 1)))?;
        write_image(viz, &a.out.join(format!("{stem}_step{}.ppm", t + 1)))?;
        listing.push_str(&format!("{},{},{}\n", t + 1, k, probs[k]));
    }
    write_text(&a.out.join(format!("{stem}_frames.csv")), &listing)?;
    print!("{listing}");
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    let preset: Preset = a.preset.parse()?;
    let mut worst = 0.0f64;
    for (name, r) in check_all_layer_kinds(a.seed)? {
        println!(
            "{name:<16} max rel error {:.3e} over {} partials",
            r.max_rel_error, r.checked
        );
        worst = worst.max(r.max_rel_error);
    }
    let r = gradcheck_model(&ModelConfig::preset(preset), a.samples, a.seed)?;
    println!(
        "network ({preset}) max rel error {:.3e} over {} sampled parameters",
        r.max_rel_error, r.checked
    );
    worst = worst.max(r.max_rel_error);
    if worst < GRADCHECK_TOLERANCE {
        println!("gradient check passed (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )))
    }
}
