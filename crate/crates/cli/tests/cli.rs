use std::fs;
use std::path::Path;
use std::process::Command;

use islr_cli::run_cli;
use islr_core::imaging::{load_image, run_pipeline, PipelineConfig};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("islr").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small model and pipeline so training takes seconds.
const SMALL_CONFIG: &str = r#"{
    "pipeline": { "model_input_size": 20 },
    "model": { "input_size": 20, "block1_filters": 4, "block2_filters": 6, "dense_units": 16 },
    "train": { "epochs": 2, "batch_size": 16, "learning_rate": 0.001 },
    "val_ratio": 0.34
}"#;

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["fly"]).0, 1);
    assert_eq!(run(&["synth", "--out", "x"]).0, 1);
    assert_eq!(
        run(&["predict", "--image", "a.pgm", "--model", "m", "--bogus"]).0,
        1
    );
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("gradcheck"));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_islr");
    let status = Command::new(bin).arg("nonsense").output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    let out = Command::new(bin)
        .args([
            "train",
            "--data",
            "/definitely/not/here",
            "--out",
            "/tmp/never.ckpt",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here"));
}

#[test]
fn gradcheck_prints_table() {
    let (code, out, err) = run(&["gradcheck"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("layer"));
    assert!(lines[0].contains("skipped"));
    for name in [
        "conv2d 3x3 same",
        "maxpool 2/2",
        "dense",
        "relu",
        "dropout infer",
        "residual conv",
        "softmax+cross-entropy",
        "model 1x20x20",
    ] {
        let row = lines
            .iter()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("missing {name}"));
        assert!(row.ends_with("ok"), "{row}");
    }
    assert_eq!(run(&["gradcheck", "--tolerance=-1"]).0, 3);
}

#[test]
fn impossible_tolerance_is_a_numeric_failure() {
    let (code, out, err) = run(&[
        "gradcheck",
        "--tolerance",
        "1e-30",
        "--model-tolerance",
        "1e-30",
    ]);
    assert_eq!(code, 4);
    assert!(out.contains("FAIL"));
    assert!(err.contains("gradient check failed"));
}

#[test]
fn bad_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"train": {"learning_rate": 0.1, "momentum": 0.9}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["synth", "--out", p(&data), "--count", "2", "--seed", "1"]).0,
        0
    );
    let ckpt = dir.path().join("m.ckpt");
    let (code, _, err) = run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(code, 3);
    assert!(err.contains("momentum"));

    fs::write(
        &cfg,
        r#"{"pipeline": {"canny_low": 100, "canny_high": 10}}"#,
    )
    .unwrap();
    assert_eq!(
        run(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&ckpt),
            "--config",
            p(&cfg)
        ])
        .0,
        3
    );
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(
        run(&[
            "preprocess",
            "--input",
            p(&data),
            "--output",
            p(&ckpt),
            "--config",
            p(&cfg)
        ])
        .0,
        3
    );
    assert_eq!(
        run(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&ckpt),
            "--config",
            "/no/such.json"
        ])
        .0,
        2
    );
}

#[test]
fn preprocess_stage_dump_matches_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["synth", "--out", p(&data), "--count", "2", "--seed", "4"]).0,
        0
    );
    let out_dir = dir.path().join("pre");
    let (code, out, err) = run(&[
        "preprocess",
        "--input",
        p(&data),
        "--output",
        p(&out_dir),
        "--stage-dump",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 72);

    let src = data.join("K").join("K_0001.pgm");
    let final_path = out_dir.join("K").join("K_0001.pgm");
    let stages_dir = out_dir.join("K").join("K_0001.stages");
    let mut names: Vec<String> = fs::read_dir(&stages_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "00_grayscale",
            "01_resize",
            "02_contrast",
            "03_blur",
            "04_median",
            "05_segment",
            "06_final"
        ]
        .map(|n| format!("{n}.pgm"))
    );
    let expected = run_pipeline(&load_image(&src).unwrap(), &PipelineConfig::default()).unwrap();
    let as_gray = |path: &Path| {
        let img = load_image(path).unwrap();
        img.pixels().iter().map(|px| px[0]).collect::<Vec<u8>>()
    };
    assert_eq!(as_gray(&final_path), expected.pixels());
    assert_eq!(as_gray(&stages_dir.join("06_final.pgm")), expected.pixels());

    let cfg = dir.path().join("edges.json");
    fs::write(&cfg, r#"{"pipeline": {"edges": true, "blur": false}}"#).unwrap();
    let out2 = dir.path().join("pre2");
    assert_eq!(
        run(&[
            "preprocess",
            "--input",
            p(&data),
            "--output",
            p(&out2),
            "--stage-dump",
            "--config",
            p(&cfg)
        ])
        .0,
        0
    );
    assert!(out2
        .join("K")
        .join("K_0001.stages")
        .join("05_edges.pgm")
        .exists());
    assert!(!out2
        .join("K")
        .join("K_0001.stages")
        .join("03_blur.pgm")
        .exists());
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["synth", "--out", p(&data), "--count", "3", "--seed", "2"]).0,
        0
    );
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();

    let train = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let csv = dir.path().join(format!("{tag}.csv"));
        let (code, out, err) = run(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&ckpt),
            "--config",
            p(&cfg),
            "--metrics",
            p(&csv),
            "--seed",
            "5",
        ]);
        assert_eq!(code, 0, "{err}");
        (ckpt, csv, out)
    };
    let (ckpt_a, csv_a, stdout) = train("a");
    let (ckpt_b, csv_b, _) = train("b");
    let csv = fs::read_to_string(&csv_a).unwrap();
    assert_eq!(csv, stdout);
    assert_eq!(
        csv.lines().next(),
        Some("epoch,train_loss,train_acc,val_loss,val_acc")
    );
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(fs::read(&csv_a).unwrap(), fs::read(&csv_b).unwrap());
    assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(&ckpt_b).unwrap());
    assert!(dir.path().join("a.best.ckpt").exists());

    let (code, out, err) = run(&["eval", "--data", p(&data), "--model", p(&ckpt_a)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("samples=108 accuracy="), "{out}");

    let image = data.join("7").join("7_0000.pgm");
    let (code, out, err) = run(&["predict", "--image", p(&image), "--model", p(&ckpt_a)]);
    assert_eq!(code, 0, "{err}");
    let fields: Vec<&str> = out.trim_end().split(' ').collect();
    assert_eq!(out.lines().count(), 1);
    assert_eq!(fields.len(), 2);
    assert_eq!(fields[0].len(), 1);
    let confidence: f64 = fields[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&confidence));

    assert_eq!(
        run(&["predict", "--image", "/no/image.pgm", "--model", p(&ckpt_a)]).0,
        2
    );
    assert_eq!(
        run(&["predict", "--image", p(&image), "--model", p(&csv_a)]).0,
        2
    );
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["synth", "--out", p(&data), "--count", "2", "--seed", "3"]).0,
        0
    );
    let cfg = dir.path().join("hot.json");
    let hot = SMALL_CONFIG.replace("0.001", "1e30").replace("0.34", "0.5");
    fs::write(&cfg, hot).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let (code, _, err) = run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn predict_on_checked_in_fixture() {
    use sha2::{Digest, Sha256};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures");
    let expected = fs::read_to_string(dir.join("expected.txt")).unwrap();
    let field = |key: &str| {
        expected
            .lines()
            .find_map(|l| {
                l.strip_prefix(key)
                    .filter(|_| !l.starts_with('#'))
                    .map(|v| v.trim().to_string())
            })
            .unwrap()
    };
    for file in ["glyph_small.ckpt", "glyph_R.pgm"] {
        let digest = Sha256::digest(fs::read(dir.join(file)).unwrap());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, field(file), "{file} changed");
    }
    let (code, out, err) = run(&[
        "predict",
        "--image",
        p(&dir.join("glyph_R.pgm")),
        "--model",
        p(&dir.join("glyph_small.ckpt")),
    ]);
    assert_eq!(code, 0, "{err}");
    let (label, confidence) = out.trim_end().split_once(' ').unwrap();
    assert_eq!(label, field("label"));
    let recorded: f64 = field("confidence").parse().unwrap();
    assert!((confidence.parse::<f64>().unwrap() - recorded).abs() < 1e-5);
}
