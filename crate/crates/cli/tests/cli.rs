//! Runs the built binary end to end on tiny configurations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
steps = 3
batch_size = 2
checkpoint_every = 2
val_batch = 4

[model]
d = 8
n_triplets = 1
patch = 4
frames = 2
height = 16
width = 16
t_max = 10

[data]
train_clips = 4
val_clips = 4
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn count_presets() {
    let text = stdout(&run(&["count", "--preset", "small"]));
    let params: u64 = text
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .last()
        .unwrap()
        .parse()
        .unwrap();
    assert!((95_000_000..=220_000_000).contains(&params), "{text}");
    assert!(text.contains("gflops quadratic"));
}

#[test]
fn train_then_sample() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(&["train", "--config", &config, "--out-dir", run_dir.to_str().unwrap()]);
    stdout(&out);

    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,loss,wall_ms"));
    let steps: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, [1, 2, 3]);
    assert!(run_dir.join("config.toml").exists());
    let ckpt = run_dir.join("checkpoint.bin");
    assert!(ckpt.exists());

    let samples = dir.path().join("samples");
    let args = [
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out-dir",
        samples.to_str().unwrap(),
        "--clips",
        "2",
        "--seed",
        "4",
    ];
    stdout(&run(&args));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(samples.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["clips"], 2);
    assert_eq!(manifest["frames"], 2);
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 4);
    let first = fs::read(samples.join("clip000_frame000.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n16 16\n255\n"));
}

#[test]
fn seed_flag_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let trace = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        stdout(&run(&[
            "train",
            "--config",
            &config,
            "--seed",
            seed,
            "--out-dir",
            out.to_str().unwrap(),
        ]));
        let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
        csv.lines()
            .map(|l| l.split(',').nth(1).unwrap().to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(trace("a", "9"), trace("b", "9"));
    assert_ne!(trace("a", "9"), trace("c", "10"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "bench",
        "--sizes",
        "64,128",
        "--reps",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    stdout(&out);
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("kernel,T,D,median_ns,p10_ns,p90_ns\n"));
}

#[test]
fn ablate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = run(&[
        "ablate",
        "--config",
        &config,
        "--seeds",
        "1",
        "--steps",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let text = stdout(&out);
    assert!(text.contains("trend holds"));
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
}

#[test]
fn gradcheck_passes() {
    let text = stdout(&run(&["gradcheck", "--seeds", "2"]));
    assert_eq!(text.lines().filter(|l| l.ends_with("ok")).count(), 10, "{text}");
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!run(&["sample"]).status.success());
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "learning_rate = 3\n").unwrap();
    let out = run(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn shipped_config_is_the_default() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.toml");
    let text = stdout(&run(&["count", "--config", path]));
    let default = stdout(&run(&["count", "--preset", "toy"]));
    assert_eq!(text, default);
}
