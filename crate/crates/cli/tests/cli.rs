use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tfcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfcount")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tfcount(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    tfcount(args).status.code().unwrap()
}

fn synth(dir: &Path, n: usize) -> Value {
    let root = dir.to_str().unwrap();
    ok(&["synth", "--out", root, "--count", &n.to_string(), "--seed", "11"]);
    serde_json::from_str(&std::fs::read_to_string(dir.join("annotation_FSC147_384.json")).unwrap()).unwrap()
}

/// `--box` arguments for the first scene, plus its ground-truth count.
fn first_scene(ann: &Value) -> (Vec<String>, usize) {
    let rec = &ann["scene_0000.png"];
    let boxes = rec["box_examples_coordinates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|corners| {
            let c: Vec<f64> = corners.as_array().unwrap().iter().flat_map(|p| p.as_array().unwrap().iter().map(|v| v.as_f64().unwrap())).collect();
            format!("{},{},{},{}", c[0].floor(), c[1].floor(), c[4].ceil(), c[5].ceil())
        })
        .collect();
    (boxes, rec["points"].as_array().unwrap().len())
}

fn count_args<'a>(image: &'a str, boxes: &'a [String]) -> Vec<&'a str> {
    let mut args = vec!["count", image, "--mock"];
    for b in boxes {
        args.extend(["--box", b.as_str()]);
    }
    args
}

#[test]
fn counts_a_synthetic_scene() {
    let dir = tempfile::tempdir().unwrap();
    let ann = synth(dir.path(), 1);
    let (boxes, gt) = first_scene(&ann);
    let image = dir.path().join("images_384_VarV2/scene_0000.png");
    let image = image.to_str().unwrap();
    let overlay = dir.path().join("overlay.png");

    let mut args = count_args(image, &boxes);
    args.extend(["--render", overlay.to_str().unwrap()]);
    assert_eq!(ok(&args).trim().parse::<usize>().unwrap(), gt);
    assert!(overlay.exists());

    let mut args = count_args(image, &boxes);
    args.push("--json");
    let v: Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(v["count"].as_u64().unwrap() as usize, gt);
    assert_eq!(v["n_ref"], 3);
}

#[test]
fn theta_only_lowers_the_count() {
    let dir = tempfile::tempdir().unwrap();
    let (boxes, _) = first_scene(&synth(dir.path(), 1));
    let image = dir.path().join("images_384_VarV2/scene_0000.png");
    let mut last = usize::MAX;
    for theta in ["-0.9", "0.5", "0.99", "0.999999"] {
        let mut args = count_args(image.to_str().unwrap(), &boxes);
        args.extend(["--theta", theta]);
        let c: usize = ok(&args).trim().parse().unwrap();
        assert!(c <= last, "theta {theta}: {c} > {last}");
        last = c;
    }
}

#[test]
fn eval_and_sweep_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    let root = dir.path().to_str().unwrap();
    let report = dir.path().join("report.json");
    ok(&["eval", "--mock", "--dataset", "fsc147", "--root", root, "--refs", "point", "--out", report.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["mae"], 0.0);
    assert_eq!(v["per_sample"].as_array().unwrap().len(), 3);

    let out_dir = dir.path().join("sweep");
    let summary = ok(&[
        "sweep", "--mock", "--dataset", "fsc147", "--root", root, "--axis", "theta", "--values", "0.2,0.9",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(summary.contains("theta=0.9"));
    assert!(out_dir.join("summary.md").exists());
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 3);
}

#[test]
fn render_debug_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    let image = dir.path().join("images_384_VarV2/scene_0000.png");
    let out_dir = dir.path().join("debug");
    ok(&["render-debug", image.to_str().unwrap(), "--mock", "--out-dir", out_dir.to_str().unwrap()]);
    for f in ["superpixels.png", "proposals.png", "candidates.png"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    let image = dir.path().join("images_384_VarV2/scene_0000.png");
    let image = image.to_str().unwrap();

    assert_eq!(code(&["count", image, "--mock", "--box", "1,1,9,9", "--set", "matching.nope=1"]), 2);
    assert_eq!(code(&["count", image, "--mock", "--box", "9,9,1,1"]), 2);
    assert_eq!(code(&["count", image, "--mock", "--theta", "7", "--box", "1,1,9,9"]), 2);
    assert_eq!(code(&["count", image, "--mock", "--box", "1000,1000,1010,1010"]), 2);
    assert_eq!(code(&["count", image, "--mock", "--set", "mock.min_area=1000000", "--point", "5,5"]), 3);
    assert_eq!(code(&["count", image, "--segmenter-weights", "/nonexistent/sam", "--box", "1,1,9,9"]), 4);
    let missing = dir.path().join("missing");
    assert_eq!(code(&["eval", "--mock", "--dataset", "fsc147", "--root", missing.to_str().unwrap()]), 5);
}
