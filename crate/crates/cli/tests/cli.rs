use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groupsr_core::archive::{archive_checksum, load_codec};
use serde_json::Value;

const SMALL: &str = r#"
seed = 7

[codec]
cleaning_width = 8
cleaning_blocks = 1
cleaning_iterations = 1
coder_width = 8
coder_blocks = 1
reduction = 2

[toy]
width = 8
blocks = 1

[train]
lr0 = 0.001
total_steps = 6
eval_every = 3
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(env.path("config.toml"), SMALL).unwrap();
        env
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], vars: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_groupsr"));
        cmd.current_dir(self.dir.path()).arg("--config").arg(self.path("config.toml")).args(args);
        cmd.env("RUST_LOG", "warn");
        for (k, v) in vars {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Three train clips and one val clip, 7 frames of 32x32, degraded to 8x8.
    fn corpus(&self) {
        self.ok(&["synth", "--out", "hr", "--clips", "3", "--frames", "7", "--size", "32"]);
        self.ok(&["--seed", "9", "synth", "--out", "hr-val", "--clips", "1", "--frames", "7", "--size", "32", "--role", "val"]);
        let mut m: Value = read_json(&self.path("hr/manifest.json"));
        let val: Value = read_json(&self.path("hr-val/manifest.json"));
        let mut entry = val["clips"][0].clone();
        entry["id"] = "val-000".into();
        entry["frames_dir"] = "../hr-val/clip-000".into();
        m["clips"].as_array_mut().unwrap().push(entry);
        fs::write(self.path("hr/manifest.json"), m.to_string()).unwrap();
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn pngs(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

fn hashes(manifest: &Path) -> Vec<String> {
    read_json(manifest)["clips"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["sha256"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn exit_codes_follow_the_error_class() {
    let env = Env::new();
    fs::write(env.path("bad.toml"), "[train]\ntotal_step = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_groupsr"))
        .args(["--config", env.path("bad.toml").to_str().unwrap(), "eval", "--pred", "a", "--gt", "b"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error code=2 kind=config:"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1);

    let out = env.run(&["degrade", "--manifest", "missing.json", "--out", "lr"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=data"));

    let out = env.run_env(&["eval", "--pred", "a", "--gt", "b"], &[("GROUPSR__TRAIN__SEED", "1")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn degradation_is_deterministic_and_keeps_arity() {
    let env = Env::new();
    env.ok(&["synth", "--out", "hr", "--clips", "2", "--frames", "5", "--size", "32"]);
    env.ok(&["degrade", "--manifest", "hr/manifest.json", "--out", "a", "--crf", "35"]);
    env.ok(&["degrade", "--manifest", "hr/manifest.json", "--out", "b", "--crf", "35"]);
    assert_eq!(hashes(&env.path("a/manifest.json")), hashes(&env.path("b/manifest.json")));
    assert_eq!(pngs(&env.path("a/clip-001")), 5);
    let img = image::open(env.path("a/clip-000/00000000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (8, 8));

    env.ok(&["degrade", "--manifest", "hr/manifest.json", "--out", "c", "--crf", "0"]);
    env.ok(&["degrade", "--manifest", "hr/manifest.json", "--out", "d", "--crf", "0"]);
    let c = hashes(&env.path("c/manifest.json"));
    assert_eq!(c, hashes(&env.path("d/manifest.json")));
    assert_ne!(c, hashes(&env.path("a/manifest.json")));
    let m = read_json(&env.path("c/manifest.json"));
    assert_eq!(m["clips"][0]["degrade"]["crf"], 0);
    assert_eq!(m["clips"][0]["degrade"]["compressor"], "dct-proxy");
}

#[test]
fn seed_flag_changes_synthesis() {
    let env = Env::new();
    env.ok(&["synth", "--out", "a", "--clips", "1", "--frames", "3", "--size", "16"]);
    env.ok(&["synth", "--out", "b", "--clips", "1", "--frames", "3", "--size", "16"]);
    env.ok(&["--seed", "8", "synth", "--out", "c", "--clips", "1", "--frames", "3", "--size", "16"]);
    let a = hashes(&env.path("a/manifest.json"));
    assert_eq!(a, hashes(&env.path("b/manifest.json")));
    assert_ne!(a, hashes(&env.path("c/manifest.json")));
}

#[test]
fn grouping_roundtrip_is_exact() {
    let env = Env::new();
    env.ok(&["synth", "--out", "hr", "--clips", "1", "--frames", "10", "--size", "16"]);
    let report: Value = serde_json::from_str(&env.ok(&["roundtrip", "--clip", "hr/clip-000"])).unwrap();
    assert_eq!(report["mean_psnr_y"], "inf");
    assert_eq!(report["max_abs_diff"], 0.0);
    assert_eq!(report["group_count"], 5);
}

#[test]
fn eval_of_identical_frames() {
    let env = Env::new();
    env.ok(&["synth", "--out", "hr", "--clips", "1", "--frames", "3", "--size", "32"]);
    env.ok(&["eval", "--pred", "hr/clip-000", "--gt", "hr/clip-000", "--out", "report/eval.json"]);
    let r = read_json(&env.path("report/eval.json"));
    assert_eq!(r["mean_psnr_y"], "inf");
    assert_eq!(r["mean_ssim_y"], 1.0);
    let csv = fs::read_to_string(env.path("report/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("clip-000,0,inf,"));
}

#[test]
fn training_workflow_end_to_end() {
    let env = Env::new();
    env.corpus();

    let out = env.run(&["train", "--manifest", "hr/manifest.json", "--out", "stage2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!env.path("stage2/backbone").exists());

    let summary: Value = serde_json::from_str(&env.ok(&["pretrain", "--manifest", "hr/manifest.json", "--out", "stage1"])).unwrap();
    assert_eq!(summary["steps_run"], 6);
    assert!(summary["final_eval_psnr_y"].as_f64().unwrap().is_finite());
    let codec = load_codec::<f32>(&env.path("stage1/codec")).unwrap();
    assert_eq!(codec.config.coder_width, 8);
    let log = fs::read_to_string(env.path("stage1/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    // stopping and resuming lands on the same weights as the straight run
    env.ok(&["pretrain", "--manifest", "hr/manifest.json", "--out", "split", "--stop-after", "2"]);
    assert!(!env.path("split/codec").exists());
    env.ok(&["pretrain", "--manifest", "hr/manifest.json", "--out", "split"]);
    assert_eq!(
        archive_checksum(&env.path("split/codec")).unwrap(),
        archive_checksum(&env.path("stage1/codec")).unwrap()
    );
    let losses = |text: &str| -> Vec<Value> {
        text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["loss"].clone()).collect()
    };
    assert_eq!(losses(&fs::read_to_string(env.path("split/log.jsonl")).unwrap()), losses(&log));

    let before = archive_checksum(&env.path("stage1/codec")).unwrap();
    env.ok(&["train", "--manifest", "hr/manifest.json", "--out", "stage2", "--codec", "stage1/codec", "--steps", "3"]);
    assert_eq!(archive_checksum(&env.path("stage1/codec")).unwrap(), before);
    assert!(env.path("stage2/backbone").is_dir());
    assert!(!env.path("stage2/codec").exists());

    env.ok(&["degrade", "--manifest", "hr/manifest.json", "--out", "lr", "--crf", "25"]);
    env.ok(&[
        "infer",
        "--clip",
        "lr/clip-000",
        "--out",
        "sr",
        "--codec",
        "stage1/codec",
        "--backbone-archive",
        "stage2/backbone",
        "--dump-latents",
    ]);
    assert_eq!(pngs(&env.path("sr")), 7);
    assert_eq!(pngs(&env.path("sr/latents")), 3);
    let img = image::open(env.path("sr/00000006.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));

    let r: Value = serde_json::from_str(&env.ok(&["eval", "--pred", "sr", "--gt", "hr/clip-000"])).unwrap();
    assert!(r["mean_psnr_y"].as_f64().unwrap() > 10.0);

    let out = env.run_env(
        &["train", "--manifest", "hr/manifest.json", "--out", "joint", "--steps", "2"],
        &[("GROUPSR__TRAIN__MODE", "joint")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env.path("joint/codec").is_dir());
}

#[test]
fn single_cell_bench_writes_csv_and_report() {
    let env = Env::new();
    fs::write(
        env.path("scenario.toml"),
        r#"
frame_counts = [4]
resolutions = [8]
repetitions = 3
compression = [false, true]

[backbone]
name = "bicubic"
scale = 4

[codec]
cleaning_width = 8
cleaning_blocks = 1
coder_width = 8
coder_blocks = 1
reduction = 2
"#,
    )
    .unwrap();
    env.ok(&["bench", "--scenario", "scenario.toml", "--out", "bench", "--chart"]);
    let csv = fs::read_to_string(env.path("bench/latency.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "frames,resolution,compression,median_ms,iqr_ms,invocations,status");
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().any(|l| l.starts_with("4,8,off,") && l.contains(",4,")));
    assert!(lines.iter().any(|l| l.starts_with("4,8,on,") && l.contains(",2,")));
    let report = read_json(&env.path("bench/speedup.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);

    fs::write(env.path("bad.toml"), "repetitions = 2\n").unwrap();
    let out = env.run(&["bench", "--scenario", "bad.toml", "--out", "bench2"]);
    assert_eq!(code(&out), 2);
}
