use std::fs;
use std::path::{Path, PathBuf};

use bctomo_cli::stages::{CONTROLS, DENSITY, FORMS, RECONSTRUCTION, SUMMARY, TRACES};
use bctomo_cli::{main_with_args, EXIT_CEILING_BREACH, EXIT_OK, EXIT_STAGE_FAILURE, EXIT_VALIDATION};
use serde_json::{json, Value};

fn small(extra: Value) -> Value {
    let mut base = json!({
        "output_dir": "out",
        "mesh": {"n_rings": 2, "n_boundary": 8},
        "times": {"n_shifts": 4},
        "sample": {"kind": "constant", "value": 1.0},
        "reconstruction": {"box": [0.5, 2.0]},
    });
    let mut extra = extra;
    // Sample kinds have disjoint fields, so the sample is replaced whole.
    if let Some(sample) = extra.as_object_mut().and_then(|o| o.remove("sample")) {
        base["sample"] = sample;
    }
    merge(&mut base, extra);
    base
}

fn merge(into: &mut Value, from: Value) {
    match (into, from) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn bctomo(command: &str, config: &Path, extra: &[&str]) -> u8 {
    let mut args = vec!["bctomo", command, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    main_with_args(args)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(SUMMARY)).unwrap()).unwrap()
}

#[test]
fn constant_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    let start = std::time::Instant::now();
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    assert!(start.elapsed().as_secs() < 60);
    let s = summary(dir.path());
    assert!(s["delta"]["value"].as_f64().unwrap() <= 0.01, "{s}");
    assert_eq!(s["ceilings_met"], json!(true));
    assert_eq!(s["oracle_mode"], json!(false));
    let recon = fs::read_to_string(dir.path().join("out").join(RECONSTRUCTION)).unwrap();
    assert!(recon.lines().any(|l| l == "k,centroid_x,centroid_y,rho_est"));
    let cmp = fs::read_to_string(dir.path().join("out/comparison.csv")).unwrap();
    assert!(cmp.starts_with("k,centroid_x,centroid_y,rho_est,rho_true\n"));
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({"sample": {"kind": "inclusions", "random": {"count": 2, "radius": 0.3, "value": 1.8}}, "seed": 11})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    let first = fs::read(dir.path().join("out").join(SUMMARY)).unwrap();
    assert_eq!(bctomo("pipeline", &cfg, &["--jobs", "1"]), EXIT_OK);
    assert_eq!(first, fs::read(dir.path().join("out").join(SUMMARY)).unwrap());
}

#[test]
fn validation_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({"times": {"final_time": 1.0, "offset": 0.3}})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_VALIDATION);
    assert!(!dir.path().join("out").exists());
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("pipeline", &cfg, &["--jobs", "0"]), EXIT_VALIDATION);
    assert_eq!(main_with_args(["bctomo", "pipeline"]), EXIT_VALIDATION);
    assert_eq!(main_with_args(["bctomo", "nonsense"]), EXIT_VALIDATION);
}

#[test]
fn stages_resume_and_refuse_stale_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("control", &cfg, &[]), EXIT_STAGE_FAILURE);
    for stage in ["mesh-gen", "sample-gen", "simulate", "forms", "harmonics", "control", "reconstruct", "score"] {
        assert_eq!(bctomo(stage, &cfg, &[]), EXIT_OK, "{stage}");
    }
    let out = dir.path().join("out");

    fs::remove_file(out.join(FORMS)).unwrap();
    assert_eq!(bctomo("control", &cfg, &[]), EXIT_STAGE_FAILURE);
    assert_eq!(bctomo("forms", &cfg, &[]), EXIT_OK);
    assert_eq!(bctomo("control", &cfg, &[]), EXIT_OK);

    // A new mesh invalidates the traces.
    let other = write_config(dir.path(), &small(json!({"mesh": {"n_boundary": 10}})));
    assert_eq!(bctomo("mesh-gen", &other, &[]), EXIT_OK);
    assert_eq!(bctomo("forms", &other, &[]), EXIT_STAGE_FAILURE);
}

#[test]
fn tampered_dumps_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    let path = dir.path().join("out").join(CONTROLS);
    let text = fs::read_to_string(&path).unwrap();
    let last_digit = text.rfind(|c: char| c.is_ascii_digit()).unwrap();
    let mut bytes = text.into_bytes();
    bytes[last_digit] = if bytes[last_digit] == b'1' { b'2' } else { b'1' };
    fs::write(&path, bytes).unwrap();
    assert_eq!(bctomo("reconstruct", &cfg, &[]), EXIT_STAGE_FAILURE);
}

#[test]
fn score_without_truth_omits_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    fs::remove_file(dir.path().join("out").join(DENSITY)).unwrap();
    assert_eq!(bctomo("score", &cfg, &[]), EXIT_OK);
    let s = summary(dir.path());
    assert!(s.get("delta").is_none());
    assert!(s["reconstruction_residual"].as_f64().is_some());
    assert!(s["warnings"].to_string().contains("δ omitted"));
}

#[test]
fn ceiling_breach_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &small(json!({"sample": {"kind": "annulus", "value": 1.5}, "reconstruction": {"lambda": 1.0, "delta_ceiling": 1e-6}})),
    );
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_CEILING_BREACH);
    let s = summary(dir.path());
    assert_eq!(s["ceilings_met"], json!(false));
    assert_eq!(s["delta"]["met"], json!(false));
}

#[test]
fn short_final_time_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({"times": {"final_time": 0.8}})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    let s = summary(dir.path());
    assert!(s["warnings"].to_string().contains("optical radius"), "{s}");
}

#[test]
fn direct_traces_agree_with_shifted_ones() {
    let dir = tempfile::tempdir().unwrap();
    let shift = write_config(dir.path(), &small(json!({"sample": {"kind": "folds"}})));
    assert_eq!(bctomo("pipeline", &shift, &[]), EXIT_OK);
    let a = summary(dir.path());
    let direct = write_config(dir.path(), &small(json!({"sample": {"kind": "folds"}, "forms": {"trace_mode": "direct"}})));
    assert_eq!(bctomo("pipeline", &direct, &[]), EXIT_OK);
    let b = summary(dir.path());
    assert_eq!(b["stages"]["simulate"]["simulated"], json!(32));
    let (da, db) = (a["delta"]["value"].as_f64().unwrap(), b["delta"]["value"].as_f64().unwrap());
    assert!(da <= 1e-6 && db <= 1e-6, "{da} {db}");
}

#[test]
fn density_file_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    // 2 rings, 8 boundary nodes; reuse the dump format with a layered field.
    let n = fs::read_to_string(dir.path().join("out").join(DENSITY)).unwrap().lines().filter(|l| !l.starts_with('#')).count() - 1;
    let mut text = String::from("bcdensity 1\n");
    for k in 0..n {
        text.push_str(&format!("{}\n", 1.0 + 0.1 * (k % 5) as f64));
    }
    fs::write(dir.path().join("truth.txt"), text).unwrap();
    let cfg = write_config(dir.path(), &small(json!({"sample": {"kind": "file", "path": "truth.txt"}})));
    assert_eq!(bctomo("pipeline", &cfg, &[]), EXIT_OK);
    assert_eq!(summary(dir.path())["stages"]["sample-gen"]["sample"], json!("file"));
    assert!(summary(dir.path())["delta"]["value"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn oracle_outputs_are_labeled() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(json!({})));
    assert_eq!(bctomo("pipeline", &cfg, &["--oracle"]), EXIT_OK);
    let out = dir.path().join("out");
    for file in [TRACES, FORMS, "oracle_states.csv"] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert!(text.contains("# meta oracle_mode true"), "{file}");
    }
    let s = summary(dir.path());
    assert_eq!(s["oracle_mode"], json!(true));
    assert!(s["stages"]["forms"]["oracle"]["connecting_error"].as_f64().unwrap() < 1e-12);
    // Turning oracle mode off removes the interior states.
    assert_eq!(bctomo("simulate", &cfg, &[]), EXIT_OK);
    assert!(!out.join("oracle_states.csv").exists());
}
