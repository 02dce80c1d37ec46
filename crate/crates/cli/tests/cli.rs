use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_flowcast");

const SUBCOMMANDS: &[&str] = &[
    "synth",
    "codebook",
    "frame-codebook",
    "train",
    "predict",
    "eval",
    "nn-eval",
    "viz",
    "train-multi",
    "predict-multi",
    "gradcheck",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "flowcast {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_flag_documents_its_default() {
    for cmd in SUBCOMMANDS {
        let help = ok(&[cmd, "--help"]);
        let mut flag: Option<String> = None;
        let mut described = String::new();
        let check = |flag: &Option<String>, text: &str| {
            if let Some(f) = flag {
                if f != "--help" {
                    assert!(
                        text.contains("[default:"),
                        "{cmd} {f} has no default: {text}"
                    );
                }
            }
        };
        for line in help.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h") {
                check(&flag, &described);
                let name = t.trim_start_matches("-h, ");
                flag = Some(name.split_whitespace().next().unwrap().to_string());
                described = t.to_string();
            } else {
                described.push_str(t);
            }
        }
        check(&flag, &described);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        run(&["eval", "--predictor", "psychic"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["train", "--augment", "maybe"]).status.code(), Some(1));
}

#[test]
fn missing_files_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = run(&[
        "viz",
        "--input",
        p(&missing),
        "--out",
        p(&dir.path().join("x.ppm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
    let out = run(&[
        "codebook",
        "--manifest",
        p(&missing),
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_succeeds() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let cb = root.join("codebook.txt");
    let run_dir = root.join("run");
    ok(&[
        "synth",
        "--out",
        p(&data),
        "--count",
        "6",
        "--steps",
        "2",
        "--seed",
        "4",
    ]);
    let manifest = data.join("manifest.txt");
    ok(&[
        "codebook",
        "--manifest",
        p(&manifest),
        "--out",
        p(&cb),
        "--preset",
        "tiny",
    ]);
    let stdout = ok(&[
        "train",
        "--manifest",
        p(&manifest),
        "--codebook",
        p(&cb),
        "--out",
        p(&run_dir),
        "--preset",
        "tiny",
        "--iters",
        "20",
        "--log-every",
        "10",
        "--snapshot-every",
        "10",
    ]);
    assert!(stdout.contains("iter       0"), "{stdout}");
    for f in ["model.ckpt", "model.cfg", "loss.csv", "model_iter_10.ckpt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let ckpt = run_dir.join("model.ckpt");

    let pred = root.join("pred");
    ok(&[
        "predict",
        "--input",
        p(&data.join("scene_00000.ppm")),
        "--checkpoint",
        p(&ckpt),
        "--codebook",
        p(&cb),
        "--out",
        p(&pred),
        "--preset",
        "tiny",
    ]);
    let flo = std::fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "flo"))
        .expect("predicted .flo");
    ok(&["viz", "--input", p(&flo), "--out", p(&root.join("viz.ppm"))]);

    for predictor in ["model", "oracle", "uniform", "nn"] {
        let out = root.join(format!("eval_{predictor}"));
        ok(&[
            "eval",
            "--manifest",
            p(&manifest),
            "--train-manifest",
            p(&manifest),
            "--codebook",
            p(&cb),
            "--checkpoint",
            p(&ckpt),
            "--predictor",
            predictor,
            "--out",
            p(&out),
            "--preset",
            "tiny",
        ]);
        let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
        assert!(csv.starts_with("metric,mask,value,cells\n"));
        assert!(csv.contains("Top-5,NZ,"));
    }
    let oracle = std::fs::read_to_string(root.join("eval_oracle/report.csv")).unwrap();
    assert!(oracle.contains("Top-5,All,1,"), "{oracle}");

    let seqs = data.join("sequences.txt");
    let fcb = root.join("frames.txt");
    ok(&[
        "frame-codebook",
        "--manifest",
        p(&seqs),
        "--out",
        p(&fcb),
        "--preset",
        "tiny",
        "--frames",
        "3",
    ]);
    let multi = root.join("multi");
    let stdout = ok(&[
        "train-multi",
        "--manifest",
        p(&seqs),
        "--checkpoint",
        p(&ckpt),
        "--codebook",
        p(&fcb),
        "--out",
        p(&multi),
        "--preset",
        "tiny",
        "--steps",
        "2",
        "--hidden",
        "8",
        "--iters",
        "50",
        "--batch",
        "3",
    ]);
    assert!(stdout.contains("training accuracy per step"));
    let future = root.join("future");
    let listing = ok(&[
        "predict-multi",
        "--input",
        p(&data.join("scene_00001.ppm")),
        "--checkpoint",
        p(&ckpt),
        "--multi-checkpoint",
        p(&multi.join("multiframe.ckpt")),
        "--codebook",
        p(&fcb),
        "--out",
        p(&future),
        "--preset",
        "tiny",
    ]);
    assert_eq!(listing.lines().count(), 3, "{listing}");
    assert!(future.join("scene_00001_step2.flo").exists());
}

#[test]
fn gradcheck_command_passes() {
    let stdout = ok(&["gradcheck", "--samples", "30"]);
    assert!(stdout.contains("gradient check passed"), "{stdout}");
}
