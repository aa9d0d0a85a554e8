use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
    "name": "cli smoke",
    "seed": 5,
    "shape": [1, 2, 12, 12],
    "sampler": "ab2",
    "schedule": {"kind": "simple", "steps": 20},
    "model": {"kind": "gaussian", "mean": {"seed": 1, "scale": 0.5}, "variance": 0.2},
    "variants": [
        {"name": "h2/s3", "skip": {"mode": "fixed", "order": "h2", "skip_calls": 3}},
        {"name": "adaptive", "skip": {"mode": "adaptive", "tolerance": 0.2}, "stabilizer": {"mode": "learning"}}
    ]
}"#;

fn epsskip(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epsskip")).args(args).current_dir(cwd).output().unwrap()
}

fn write(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = epsskip(&["run", "--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["seed", "sampler", "schedule", "variants", "skip_calls", "anchor_interval", "stabilizer", "EXIT STATUS"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), CONFIG);
    let out = epsskip(&["run", &cfg, "--out", "results"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("baseline: NFE 20"));
    assert!(stdout.contains("h2/s3: NFE 16"));
    let results = dir.path().join("results");
    for file in ["summary.md", "summary.csv", "baseline.steps.csv", "h2-s3.report.json", "adaptive.steps.csv"] {
        assert!(results.join(file).exists(), "missing {file}");
    }
    assert!(fs::read_to_string(results.join("summary.md")).unwrap().contains("cli smoke"));
}

#[test]
fn default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), CONFIG);
    assert_eq!(epsskip(&["run", &cfg], dir.path()).status.code(), Some(0));
    assert!(dir.path().join("epsskip-out/summary.md").exists());
}

#[test]
fn only_and_dump_latents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), CONFIG);
    let out = epsskip(&["run", &cfg, "--out", "o", "--only", "adaptive", "--dump-latents"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let o = dir.path().join("o");
    assert!(!o.join("h2-s3.steps.csv").exists());
    assert_eq!(fs::read(o.join("adaptive.latent.f32")).unwrap().len(), 4 * 2 * 12 * 12);
    let sidecar = fs::read_to_string(o.join("baseline.latent.json")).unwrap();
    assert!(sidecar.contains("float32") && sidecar.contains("little"));
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "{\"seed\": 1,");
    let out = epsskip(&["run", &bad, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:"));
    assert!(!dir.path().join("o").exists());

    let cfg = write(dir.path(), CONFIG);
    let out = epsskip(&["run", &cfg, "--out", "o", "--only", "missing"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());

    let out = epsskip(&["run", "does-not-exist.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_run_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        r#"{"seed": 1, "shape": [2], "sampler": "euler",
            "schedule": {"kind": "simple", "steps": 4},
            "model": {"kind": "scripted", "epsilons": [[1.0], [0.5]]}}"#,
    );
    let out = epsskip(&["run", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("baseline: failed"));
    assert!(dir.path().join("o/summary.md").exists());
}
