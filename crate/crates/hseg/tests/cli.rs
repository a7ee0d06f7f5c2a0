use std::fs;
use std::path::Path;
use std::process::Command;

use hseg::png_io::load_labels;
use serde_json::Value;

fn hseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hseg"))
        .args(args)
        .env("HSEG_THREADS", "1")
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    hseg(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "synth.width=32",
    "--set", "synth.height=32",
    "--set", "synth.count=[1,3]",
    "--set", "synth.size=[4.0,7.0]",
];

const TINY_NET: &[&str] = &[
    "--set", "guides.n=4",
    "--set", "network.depth=1",
    "--set", "network.base_channels=4",
    "--set", "network.tile=[32,32]",
    "--set", "train.batch_size=2",
    "--set", "train.adam.lr=0.003",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: Vec<String>) -> std::process::Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = hseg(&refs);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["synth", "--out", "/tmp/x"]), 1);
    assert_eq!(code(&["synth", "--out", "/tmp/x", "--seed", "1", "--set", "train.nosuch=1"]), 1);
    assert_eq!(code(&["synth", "--out", "/tmp/x", "--seed", "1", "--config", "/nonexistent.toml"]), 1);
    assert_eq!(code(&["eval", "--pred", "a", "--gt", "b", "--out", "c", "--per-crop", "12"]), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&["fit-guides", "--data", p(&missing), "--out", p(&dir.path().join("g.json")), "--seed", "1"]), 2);
    assert_eq!(code(&["eval", "--pred", p(&missing), "--gt", p(&missing), "--out", p(&dir.path().join("r.json"))]), 2);
    fs::write(dir.path().join("not.png"), b"junk").unwrap();
    assert_eq!(
        code(&["render", "--image", p(&dir.path().join("not.png")), "--labels", p(&dir.path().join("not.png")), "--out", p(&dir.path().join("o.png"))]),
        2
    );
}

#[test]
fn strict_fit_that_cannot_converge_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    run(with(&["synth", "--out", p(&data), "--seed", "2", "--images", "4"], SMALL));
    let out = dir.path().join("g.json");
    let args = [
        "fit-guides", "--data", p(&data), "--out", p(&out), "--seed", "1", "--strict",
        "--set", "guides.n=1", "--set", "guides.margin=3.0", "--set", "guides.max_iters=100",
    ];
    assert_eq!(code(&args), 3);
}

#[test]
fn evaluating_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    run(with(&["synth", "--out", p(&data), "--seed", "5", "--images", "3"], SMALL));
    let report = dir.path().join("r.json");
    let out = run(vec![
        "eval".into(), "--pred".into(), p(&data).into(), "--gt".into(), p(&data).into(), "--out".into(), p(&report).into(),
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sbd"], 1.0);
    assert_eq!(v["dic"], 0.0);
    assert_eq!(v["ap"], 1.0);
    let file: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(file, v);
    let csv = fs::read_to_string(report.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let data = root.join("data");
    let guides = root.join("guides.json");
    let model = root.join("model.ckpt");
    let pred = root.join("pred");
    let report = root.join("report.json");
    run(with(&["synth", "--out", p(&data), "--seed", "11", "--images", "6"], SMALL));
    run(with(&["fit-guides", "--data", p(&data), "--out", p(&guides), "--seed", "11"], TINY_NET));
    run(with(&["train", "--data", p(&data), "--guides", p(&guides), "--out", p(&model), "--seed", "11", "--epochs", "2"], TINY_NET));
    run(vec![
        "infer".into(), "--input".into(), p(&data).into(), "--checkpoint".into(), p(&model).into(),
        "--guides".into(), p(&guides).into(), "--out".into(), p(&pred).into(),
    ]);
    run(vec!["eval".into(), "--pred".into(), p(&pred).into(), "--gt".into(), p(&data).into(), "--out".into(), p(&report).into()]);
    run(vec![
        "render".into(), "--image".into(), p(&data.join("images/0000.png")).into(),
        "--labels".into(), p(&pred.join("labels/0000.png")).into(), "--out".into(), p(&root.join("overlay.png")).into(),
    ]);
    let mut files = Vec::new();
    for entry in walk(root) {
        let rel = entry.strip_prefix(root).unwrap().to_string_lossy().into_owned();
        files.push((rel, fs::read(&entry).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["data/meta.json", "guides.json", "model.ckpt", "model.ckpt.loss.csv", "pred/scores.csv", "report.json", "report.csv", "overlay.png"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(fa, fb);
    let labels = load_labels(&a.path().join("pred/labels/0000.png")).unwrap();
    assert_eq!((labels.width(), labels.height()), (32, 32));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path();
    let data = r.join("d");
    let guides = r.join("g.json");
    run(with(&["synth", "--out", p(&data), "--seed", "3", "--images", "4"], SMALL));
    run(with(&["fit-guides", "--data", p(&data), "--out", p(&guides), "--seed", "3"], TINY_NET));
    let base = ["train", "--data", p(&data), "--guides", p(&guides), "--seed", "3"];
    run(with(&base, &[&["--out", p(&r.join("full.ckpt")), "--epochs", "2"], TINY_NET].concat()));
    run(with(&base, &[&["--out", p(&r.join("half.ckpt")), "--epochs", "1"], TINY_NET].concat()));
    run(with(
        &base,
        &[&["--out", p(&r.join("resumed.ckpt")), "--epochs", "2", "--resume", p(&r.join("half.ckpt"))], TINY_NET].concat(),
    ));
    assert_eq!(fs::read(r.join("full.ckpt")).unwrap(), fs::read(r.join("resumed.ckpt")).unwrap());
}

#[test]
fn sampled_guide_ablations_write_their_guides() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path();
    let data = r.join("d");
    run(with(&["synth", "--out", p(&data), "--seed", "3", "--images", "2"], SMALL));
    let model = r.join("low.ckpt");
    run(with(
        &["train", "--data", p(&data), "--out", p(&model), "--seed", "3", "--epochs", "1", "--ablation", "low"],
        TINY_NET,
    ));
    let g = hseg::guides_file::load_guides(&r.join("low.ckpt.guides.json")).unwrap();
    assert!(g.params.iter().all(|q| q.freq_x.abs() <= 5.0 && q.freq_y.abs() <= 5.0));
    assert_eq!(
        code(&["train", "--data", p(&data), "--out", p(&r.join("x.ckpt")), "--seed", "3"]),
        1
    );
}
