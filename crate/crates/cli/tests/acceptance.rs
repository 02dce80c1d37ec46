//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any of them failed.
//!
//! Criteria 6, 7, 8 and 10 drive the `flowcast` binary end to end; the rest
//! call the library directly.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use flowcast::codebook::{
    build_codebook, kmeans, quantize, soft_decode, FlowCodebook, FrameCodebook, PredictionGrid,
    QuantizedLabelGrid,
};
use flowcast::flow::{cell_means, read_flo, read_image, write_flo, write_image, FlowField, Image};
use flowcast::metrics::{epe, EvalMask};
use flowcast::model::{gradcheck_model, preprocess, spatial_loss, Model, ModelConfig};
use flowcast::nn::gradcheck::check_all_layer_kinds;
use flowcast::nn::{Checkpoint, NamedTensor, MODEL_MAGIC, MULTIFRAME_MAGIC};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_flowcast");

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn flowcast(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "`flowcast {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst_layer = 0.0f64;
    for (name, r) in check_all_layer_kinds(17).map_err(err)? {
        ensure!(
            r.max_rel_error < 1e-4,
            "{name}: relative error {:.3e}",
            r.max_rel_error
        );
        worst_layer = worst_layer.max(r.max_rel_error);
    }
    let net = gradcheck_model(&ModelConfig::tiny(), 150, 17).map_err(err)?;
    ensure!(
        net.max_rel_error < 1e-3,
        "tiny network: relative error {:.3e}",
        net.max_rel_error
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:.1?}");
    Ok(format!(
        "worst layer {worst_layer:.2e}, network {:.2e} over {} parameters, {elapsed:.1?}",
        net.max_rel_error, net.checked
    ))
}

fn fresh_loss(cfg: ModelConfig, seed: u64) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.input_size;
    let image = Image::from_vec(
        side,
        side,
        3,
        (0..side * side * 3).map(|_| rng.gen::<f64>()).collect(),
    )
    .map_err(err)?;
    let cells = cfg.grid_m * cfg.grid_n;
    let labels = QuantizedLabelGrid::new(
        cfg.grid_m,
        cfg.grid_n,
        (0..cells).map(|_| rng.gen_range(0..cfg.clusters)).collect(),
        cfg.clusters,
    )
    .map_err(err)?;
    let expected = cells as f64 * (cfg.clusters as f64).ln();
    let model = Model::new(cfg, seed).map_err(err)?;
    let grid = model
        .forward(&preprocess(&image, side).map_err(err)?)
        .map_err(err)?;
    Ok((spatial_loss(&grid, &labels).map_err(err)?.0, expected))
}

fn closed_form_loss() -> Outcome {
    let mut parts = Vec::new();
    for (name, cfg) in [
        ("tiny", ModelConfig::tiny()),
        ("paper", ModelConfig::paper()),
    ] {
        let (loss, expected) = fresh_loss(cfg, 3)?;
        let rel = (loss - expected).abs() / expected;
        ensure!(rel < 0.01, "{name}: loss {loss:.4} vs {expected:.4}");
        parts.push(format!("{name} {loss:.4} (expected {expected:.4})"));
    }
    Ok(parts.join(", "))
}

fn random_codebook(rng: &mut ChaCha8Rng, c: usize) -> FlowCodebook {
    let mut centers: Vec<[f64; 2]> = Vec::new();
    while centers.len() < c {
        let p = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
        if !centers.contains(&p) {
            centers.push(p);
        }
    }
    FlowCodebook::new(centers).expect("distinct centers")
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FlowField {
    let data = (0..w * h * 2).map(|_| rng.gen_range(-8.0..8.0)).collect();
    FlowField::from_vec(w, h, data).expect("finite values")
}

fn quantization_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..100 {
        let c = rng.gen_range(4..=40);
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let (rows, cols) = (rng.gen_range(1..=h.min(10)), rng.gen_range(1..=w.min(10)));
        let field = random_flow(&mut rng, w, h);
        let cb = random_codebook(&mut rng, c);
        let labels = quantize(&field, &cb, rows, cols).map_err(err)?;
        let means = cell_means(&field, rows, cols).map_err(err)?;
        let decoded = soft_decode(&PredictionGrid::one_hot(&labels, c), &cb).map_err(err)?;
        let bound = means
            .vectors()
            .map(|(u, v)| {
                cb.centers()
                    .iter()
                    .map(|k| (u - k[0]).hypot(v - k[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let e = epe(&decoded, &means, &EvalMask::all(rows, cols))
            .map_err(err)?
            .ok_or("empty mask")?;
        if e > bound {
            violations += 1;
        }
        tightest = tightest.min(bound - e);
    }
    ensure!(
        violations == 0,
        "{violations} of 100 fields exceed the bound"
    );
    Ok(format!(
        "0 violations in 100 fields, smallest slack {tightest:.3e}"
    ))
}

fn kmeans_objective() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut iterations = 0;
    for run in 0..50u64 {
        let dim = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=10);
        let n = rng.gen_range(k.max(20)..300);
        let points: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let km = kmeans(&points, dim, k, run, 100).map_err(err)?;
        for (i, w) in km.sse_history.windows(2).enumerate() {
            ensure!(
                w[1] <= w[0],
                "run {run}: objective rose from {} to {} at iteration {}",
                w[0],
                w[1],
                i + 1
            );
        }
        iterations += km.sse_history.len();
    }
    let mut samples = Vec::new();
    for (x, y) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
        samples.extend([x, y, x + 10.0, y + 10.0]);
    }
    for seed in 0..10 {
        let cb = build_codebook(&samples, 2, seed, 50).map_err(err)?;
        let mut c = cb.centers().to_vec();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        ensure!(
            c == vec![[0.5, 0.5], [10.5, 10.5]],
            "separable example, seed {seed}: centers {c:?}"
        );
    }
    Ok(format!(
        "50 runs, {iterations} objective values, none increasing; separable centers exact"
    ))
}

fn metric_oracle() -> Outcome {
    oracle::flow_metrics(oracle::GRIDS)?;
    oracle::top_n(oracle::GRIDS)?;
    oracle::nonzero(oracle::GRIDS)?;
    oracle::canny(oracle::GRIDS)?;
    Ok(format!(
        "EPE, Dir, Orient, Top-N, NZ and Canny masks agree on {} grids each",
        oracle::GRIDS
    ))
}

fn round_trips(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..100 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));

        let data = (0..w * h * 2)
            .map(|_| rng.gen_range(-60.0f32..60.0) as f64)
            .collect();
        let flow = FlowField::from_vec(w, h, data).map_err(err)?;
        let p = dir.join("f.flo");
        write_flo(&flow, &p).map_err(err)?;
        ensure!(read_flo(&p).map_err(err)? == flow, ".flo instance {i}");

        let ch = if i % 2 == 0 { 1 } else { 3 };
        let data = (0..w * h * ch)
            .map(|_| rng.gen_range(0..=255u8) as f64 / 255.0)
            .collect();
        let image = Image::from_vec(w, h, ch, data).map_err(err)?;
        let p = dir.join(if ch == 1 { "i.pgm" } else { "i.ppm" });
        write_image(&image, &p).map_err(err)?;
        ensure!(read_image(&p).map_err(err)? == image, "PNM instance {i}");

        for magic in [MODEL_MAGIC, MULTIFRAME_MAGIC] {
            let tensors = (0..rng.gen_range(1..6))
                .map(|t| {
                    let dims: Vec<usize> = (0..rng.gen_range(1..5))
                        .map(|_| rng.gen_range(1..6))
                        .collect();
                    let n = dims.iter().product();
                    NamedTensor {
                        name: format!("layer{t}.weight"),
                        dims,
                        data: (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
                    }
                })
                .collect();
            let ckpt = Checkpoint::new(magic, rng.gen(), tensors);
            let p = dir.join("c.ckpt");
            ckpt.save(&p).map_err(err)?;
            let back = Checkpoint::load(&p, magic).map_err(err)?;
            ensure!(back == ckpt, "checkpoint instance {i}");
            ensure!(
                back.to_bytes().map_err(err)? == std::fs::read(&p).map_err(err)?,
                "checkpoint instance {i}: bytes differ after reload"
            );
        }

        let c = rng.gen_range(1..50);
        let cb = random_codebook(&mut rng, c);
        let p = dir.join("cb.txt");
        cb.save(&p).map_err(err)?;
        ensure!(
            FlowCodebook::load(&p).map_err(err)? == cb,
            "codebook instance {i}"
        );

        let (rows, cols) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let frames = (0..rng.gen_range(1..8))
            .map(|_| {
                (0..rows * cols * 2)
                    .map(|_| rng.gen_range(-5.0..5.0))
                    .collect()
            })
            .collect();
        let fc = FrameCodebook::new(rows, cols, frames).map_err(err)?;
        let p = dir.join("fcb.txt");
        fc.save(&p).map_err(err)?;
        ensure!(
            FrameCodebook::load(&p).map_err(err)? == fc,
            "frame codebook instance {i}"
        );
    }
    Ok("100 instances each of .flo, PGM/PPM, both checkpoints and both codebooks".into())
}

/// Report values of one `report.csv`, keyed by `metric,mask`.
fn report_value(dir: &Path, metric: &str, mask: &str) -> Result<f64, String> {
    let path = dir.join("report.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f.len() == 4 && f[0] == metric && f[1] == mask).then(|| f[2].parse::<f64>())
        })
        .ok_or_else(|| format!("{metric}/{mask} missing from {}", path.display()))?
        .map_err(err)
}

struct SynthRun {
    dir: PathBuf,
    clusters: usize,
    elapsed: Duration,
}

const TRAIN_ITERS: &str = "8000";

/// Synthetic tone-cue experiment: data, codebook, training and three
/// evaluations, all through the command line with one worker.
fn synthetic_run(root: &Path, name: &str) -> Result<SynthRun, String> {
    let start = Instant::now();
    let dir = root.join(name);
    let (train, test, run) = (dir.join("train"), dir.join("test"), dir.join("run"));
    let cb = dir.join("codebook.txt");
    let train_manifest = train.join("manifest.txt");
    let test_manifest = test.join("manifest.txt");
    flowcast(&[
        "synth",
        "--out",
        s(&train),
        "--kind",
        "tone-cue",
        "--count",
        "200",
        "--frames-per-scene",
        "8",
        "--seed",
        "1",
    ])?;
    flowcast(&[
        "synth",
        "--out",
        s(&test),
        "--kind",
        "tone-cue",
        "--count",
        "50",
        "--seed",
        "2",
    ])?;
    flowcast(&[
        "codebook",
        "--manifest",
        s(&train_manifest),
        "--out",
        s(&cb),
        "--preset",
        "tiny",
        "--seed",
        "0",
    ])?;
    flowcast(&[
        "train",
        "--manifest",
        s(&train_manifest),
        "--codebook",
        s(&cb),
        "--out",
        s(&run),
        "--preset",
        "tiny",
        "--seed",
        "0",
        "--iters",
        TRAIN_ITERS,
        "--augment",
        "on",
        "--flip",
        "off",
        "--jobs",
        "1",
        "--log-every",
        "500",
    ])?;
    let ckpt = run.join("model.ckpt");
    for predictor in ["model", "uniform", "nn"] {
        flowcast(&[
            "eval",
            "--manifest",
            s(&test_manifest),
            "--codebook",
            s(&cb),
            "--checkpoint",
            s(&ckpt),
            "--predictor",
            predictor,
            "--out",
            s(&dir.join(format!("eval_{predictor}"))),
            "--preset",
            "tiny",
            "--train-manifest",
            s(&train_manifest),
            "--features",
            "raw",
            "--jobs",
            "1",
        ])?;
    }
    let clusters = FlowCodebook::load(&cb).map_err(err)?.len();
    Ok(SynthRun {
        dir,
        clusters,
        elapsed: start.elapsed(),
    })
}

fn synthetic_end_to_end(run: &SynthRun) -> Outcome {
    let eval = run.dir.join("eval_model");
    let top5 = report_value(&eval, "Top-5", "NZ")?;
    let orient = report_value(&eval, "Orient", "NZ")?;
    let uniform = report_value(&run.dir.join("eval_uniform"), "Top-5", "NZ")?;
    let chance = 5.0 / run.clusters as f64;
    let summary = format!(
        "Top-5-NZ {top5:.4}, Orient-NZ {orient:.4}, uniform Top-5-NZ {uniform:.4} \
         (5/C = {chance:.4}), {TRAIN_ITERS} iterations in {:.0?}",
        run.elapsed
    );
    ensure!(top5 >= 0.90, "Top-5-NZ below 0.90: {summary}");
    ensure!(orient >= 0.85, "Orient-NZ below 0.85: {summary}");
    ensure!(
        (uniform - chance).abs() <= 0.1 && uniform < top5,
        "uniform control far from chance: {summary}"
    );
    ensure!(
        run.elapsed <= Duration::from_secs(30 * 60),
        "over 30 minutes: {summary}"
    );
    Ok(summary)
}

fn nn_baseline(run: &SynthRun) -> Outcome {
    let model = report_value(&run.dir.join("eval_model"), "Top-5", "NZ")?;
    let nn = report_value(&run.dir.join("eval_nn"), "Top-5", "NZ")?;
    ensure!(nn < model, "NN {nn:.4} is not below the model {model:.4}");
    Ok(format!("raw-pixel NN Top-5-NZ {nn:.4} < model {model:.4}"))
}

fn multiframe_overfit(root: &Path, single: &SynthRun) -> Outcome {
    let dir = root.join("multi");
    let data = dir.join("data");
    let fcb = dir.join("frames.txt");
    let out = dir.join("run");
    let seqs = data.join("sequences.txt");
    flowcast(&[
        "synth",
        "--out",
        s(&data),
        "--kind",
        "tone-cue",
        "--count",
        "10",
        "--steps",
        "3",
        "--seed",
        "3",
    ])?;
    flowcast(&[
        "frame-codebook",
        "--manifest",
        s(&seqs),
        "--out",
        s(&fcb),
        "--preset",
        "tiny",
        "--frames",
        "8",
    ])?;
    let stdout = flowcast(&[
        "train-multi",
        "--manifest",
        s(&seqs),
        "--checkpoint",
        s(&single.dir.join("run").join("model.ckpt")),
        "--codebook",
        s(&fcb),
        "--out",
        s(&out),
        "--preset",
        "tiny",
        "--steps",
        "3",
        "--hidden",
        "32",
        "--iters",
        "10000",
        "--batch",
        "10",
        "--seed",
        "0",
    ])?;
    let log = std::fs::read_to_string(out.join("multi_loss.csv")).map_err(err)?;
    let first: f64 = log
        .lines()
        .nth(1)
        .and_then(|l| l.split(',').nth(1))
        .ok_or("empty loss log")?
        .parse()
        .map_err(err)?;
    let expected = 3.0 * 8f64.ln();
    ensure!(
        (first - expected).abs() < 1e-6,
        "fresh loss {first} vs T ln K = {expected}"
    );
    let acc = stdout
        .lines()
        .find_map(|l| l.strip_prefix("training accuracy per step: "))
        .ok_or("no accuracy line")?;
    let acc: Vec<f64> = acc
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(err))
        .collect::<Result<_, _>>()?;
    ensure!(
        acc.len() == 3 && acc.iter().all(|&a| a == 1.0),
        "per-step top-1 {acc:?}"
    );
    Ok(format!(
        "fresh loss {first:.9} = 3 ln 8, per-step top-1 {acc:?} after 10000 iterations"
    ))
}

fn determinism(a: &SynthRun, b: &SynthRun) -> Outcome {
    let mut files = vec![
        "codebook.txt".to_string(),
        "run/model.ckpt".into(),
        "run/model.cfg".into(),
        "run/loss.csv".into(),
    ];
    for p in ["model", "uniform", "nn"] {
        for f in ["report.csv", "report.txt", "per_image.csv"] {
            files.push(format!("eval_{p}/{f}"));
        }
    }
    for f in &files {
        let x = std::fs::read(a.dir.join(f)).map_err(err)?;
        let y = std::fs::read(b.dir.join(f)).map_err(err)?;
        ensure!(x == y, "{f} differs between runs");
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs",
        files.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| match outcome {
        Ok(msg) => println!("criterion {id:>2} PASS  {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("criterion {id:>2} FAIL  {name}: {msg}");
        }
    };

    report(1, "gradient suite", gradients());
    report(2, "initial loss closed form", closed_form_loss());
    report(3, "quantize/decode bound", quantization_bound());
    report(4, "k-means", kmeans_objective());
    report(5, "metric oracle", metric_oracle());

    let first = synthetic_run(root, "a");
    match &first {
        Ok(run) => {
            report(6, "synthetic end-to-end", synthetic_end_to_end(run));
            report(7, "nearest-neighbor baseline", nn_baseline(run));
            report(8, "multiframe overfit", multiframe_overfit(root, run));
        }
        Err(e) => {
            report(6, "synthetic end-to-end", Err(e.clone()));
            report(
                7,
                "nearest-neighbor baseline",
                Err("no synthetic run".into()),
            );
            report(
                8,
                "multiframe overfit",
                Err("no single-frame checkpoint".into()),
            );
        }
    }

    let dir9 = root.join("formats");
    std::fs::create_dir_all(&dir9).expect("format dir");
    report(9, "format round trips", round_trips(&dir9));

    let outcome = match (&first, synthetic_run(root, "b")) {
        (Ok(a), Ok(b)) => determinism(a, &b),
        (Err(e), _) => Err(e.clone()),
        (_, Err(e)) => Err(e),
    };
    report(10, "determinism", outcome);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
