use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spinewalker");
const ECHO: &str = env!("CARGO_BIN_EXE_spinewalker-echo");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("SPINEWALKER_LOG", "error").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantoms(dir: &Path, count: usize, config: Option<&Path>) -> PathBuf {
    let out = dir.join("phantoms");
    let n = count.to_string();
    let mut args = vec!["phantom", "--count", &n, "--seed", "7", "--out", s(&out)];
    if let Some(c) = config {
        args.extend(["--config", s(c)]);
    }
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn oracle_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = phantoms(tmp.path(), 2, None);
    assert!(data.join("run_manifest.json").is_file());
    assert!(data.join("case_001.truth.json").is_file());

    let seg = tmp.path().join("seg");
    let o = run(&["segment", "--vol", s(&data), "--backend", "oracle", "--truth", s(&data), "--mode", "top-down", "--out", s(&seg), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let inst = read_json(&seg.join("case_000/instances.json"));
    assert_eq!(inst["instances"].as_array().unwrap().len(), 24);
    assert_eq!(inst["termination"], "bottom_of_scan");
    assert!(seg.join("case_000/instances.vgrid.raw").is_file());

    let report = tmp.path().join("eval/report.json");
    let o = run(&["eval", "--pred", s(&seg), "--truth", s(&data), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&report);
    assert_eq!(r["n_cases"], 2);
    assert_eq!(r["l1_accuracy"], 1.0);
    let manifest = read_json(&tmp.path().join("eval/run_manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    let csv = std::fs::read_to_string(tmp.path().join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("id,correct,shift,err_mm,mean_dice\n"));

    let merged = tmp.path().join("merged/report.json");
    let cases = tmp.path().join("eval/report.cases.json");
    let o = run(&["report", "--cases", s(&cases), "--out", s(&merged)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&merged).unwrap(), std::fs::read(&report).unwrap());
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"phantom": {"curvature_amplitude_mm": 12.0}, "backend": {"kind": "oracle", "noise_sigma": 0.7}}"#).unwrap();
    let data = phantoms(tmp.path(), 1, Some(&cfg));
    let mut outputs = Vec::new();
    for run_id in ["a", "b"] {
        let seg = tmp.path().join(run_id);
        let o = run(&["segment", "--config", s(&cfg), "--vol", s(&data), "--truth", s(&data), "--out", s(&seg)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push([
            std::fs::read(seg.join("case_000/instances.json")).unwrap(),
            std::fs::read(seg.join("case_000/instances.vgrid.raw")).unwrap(),
        ]);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sample_writes_patches_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = phantoms(tmp.path(), 1, None);
    let out = tmp.path().join("patches");
    let case = data.join("case_000");
    let o = run(&["sample", "--vol", s(&case), "--truth", s(&case), "--count", "4", "--seed", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..4 {
        for part in ["intensity.vgrid.json", "target.vgrid.raw", "memory.vgrid.raw", "meta.json"] {
            assert!(out.join(format!("patch_{i:05}.{part}")).is_file(), "patch {i} {part}");
        }
    }
    assert_eq!(read_json(&out.join("run_manifest.json"))["command"], "sample");
}

#[test]
fn usage_and_config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["segment", "--bogus"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"traversal": {"stride": 3}}"#).unwrap();
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    std::fs::write(&cfg, r#"{"labeling": {"sigma": -1}}"#).unwrap();
    assert_eq!(code(&run(&["phantom", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))])), 1);

    // the oracle cannot run without truth
    let data = phantoms(tmp.path(), 1, None);
    let o = run(&["segment", "--vol", s(&data), "--backend", "oracle", "--out", s(&tmp.path().join("s"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn external_backend_through_echo_process() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"phantom": {"n_vertebrae": 6, "dims": [160, 128, 240]}}"#).unwrap();
    let data = phantoms(tmp.path(), 1, Some(&cfg));
    let case = data.join("case_000");

    let seg = tmp.path().join("ok");
    let o = run(&["segment", "--vol", s(&case), "--backend", "external", "--backend-cmd", ECHO, "--out", s(&seg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let inst = read_json(&seg.join("case_000/instances.json"));
    assert_eq!(inst["instances"].as_array().unwrap().len(), 6);

    for fault in ["bad-magic", "bad-version", "out-of-range", "truncate", "exit"] {
        let out = tmp.path().join(fault);
        let o = run(&[
            "segment", "--vol", s(&case), "--backend", "external", "--backend-cmd", ECHO,
            "--backend-arg=--fault", "--backend-arg", fault, "--backend-arg=--fault-after", "--backend-arg", "2",
            "--out", s(&out),
        ]);
        assert_eq!(code(&o), 2, "fault {fault}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.join("case_000/instances.json").exists());
    }
}

#[test]
fn hanging_backend_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"phantom": {{"n_vertebrae": 4, "dims": [160, 128, 180]}}, "backend": {{"kind": "external", "command": ["{ECHO}", "--fault", "hang"], "timeout_s": 0.5}}}}"#),
    )
    .unwrap();
    let data = phantoms(tmp.path(), 1, Some(&cfg));
    let start = std::time::Instant::now();
    let o = run(&["segment", "--config", s(&cfg), "--vol", s(&data), "--out", s(&tmp.path().join("s"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("did not answer within"));
    assert!(start.elapsed().as_secs() < 30);
}
