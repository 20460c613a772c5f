use kicksim_cli::config::{emit_config, parse_config, RunConfig};
use kicksim_cli::output::{RunManifest, Status};
use kicksim_cli::{run, Suite};
use kicksim_core::ModelSpec;
use serde_json::{json, Value};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kicksim"))
}

fn cosine_model() -> Value {
    serde_json::to_value(ModelSpec::standard_cosine().config()).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> std::path::PathBuf {
    let p = dir.join("config.in.json");
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn minimal_config_gets_defaults() {
    let cfg = parse_config(r#"{"model": {"potential": {"kind": "zero"}, "kicks": {"rate": 1.0, "coin": {"kind": "constant", "value": 0.5}, "jumps": {"kind": "laplace", "scale": {"kind": "constant", "value": 1.0}}}}}"#).unwrap();
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.simulation.h, 1e-3);
    assert_eq!(cfg.simulation.energy_tol, 1e-8);
    let free = ModelSpec::free_homogeneous().config().clone();
    assert_eq!(cfg.model.kicks, free.kicks);
    assert!(matches!(cfg.model.potential, kicksim_core::PotentialSpec::Zero { .. }));
}

#[test]
fn emit_parse_emit_is_byte_identical() {
    let inputs = [
        json!({}),
        json!({"seed": 7, "model": cosine_model(), "simulation": {"t": 123.456, "n": 17, "s_grid": [0.1, 0.3333333333333333, 1.0]}}),
        json!({"records": {"levels": [0.5, 2.25], "cache_dir": "/tmp/x"}, "flatten": {"momenta": [[-12.5, 100]]}}),
    ];
    for x in inputs {
        let a = parse_config(&x.to_string()).unwrap();
        let text = emit_config(&a);
        let b = parse_config(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, emit_config(&b));
    }
}

#[test]
fn coin_out_of_range_names_path() {
    let mut m = cosine_model();
    m["kicks"]["coin"] = json!({"kind": "fourier", "mean": 0.9, "cos": [0.3]});
    let err = parse_config(&json!({"model": m}).to_string()).unwrap_err();
    assert!(err.0.iter().any(|e| e.path == "model.kicks.coin"), "{err}");
}

#[test]
fn unknown_keys_are_rejected_with_path() {
    let err = parse_config(r#"{"simulation": {"t": 10.0, "horizon": 3}}"#).unwrap_err();
    assert!(err.to_string().contains("simulation"), "{err}");
    assert!(parse_config(r#"{"colour": 1}"#).is_err());
}

#[test]
fn out_of_range_values_are_collected() {
    let err = parse_config(r#"{"simulation": {"t": -1.0, "n": 0}, "clt": {"alpha": 2.0}}"#).unwrap_err();
    let paths: Vec<_> = err.0.iter().map(|e| e.path.as_str()).collect();
    for p in ["simulation.t", "simulation.n", "clt.alpha"] {
        assert!(paths.contains(&p), "{paths:?}");
    }
}

fn small_clt() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.simulation.t = 20.0;
    cfg.simulation.n = 1000;
    cfg.clt.resamples = 40;
    cfg
}

#[test]
fn clt_is_deterministic_across_runs_and_workers() {
    let cfg = small_clt();
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for (i, w) in [1, 1, 3].into_iter().enumerate() {
        let out = tmp.path().join(format!("r{i}"));
        let o = run("clt", &[Suite::Clt], &cfg, &out, w).unwrap();
        assert!(o.manifest.complete);
        let files: Vec<_> = o.manifest.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect();
        assert!(files.iter().any(|(p, _)| p == "clt.csv"));
        digests.push(files);
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0], digests[2]);
}

#[test]
fn manifest_lists_every_emitted_file_with_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let mut cfg = RunConfig::default();
    cfg.simulation.t = 20.0;
    run("simulate", &[Suite::Validate, Suite::Simulate], &cfg, &out, 1).unwrap();
    let m = manifest(&out);
    for f in &m.files {
        let bytes = std::fs::read(out.join(&f.path)).unwrap();
        assert_eq!(kicksim_cli::output::sha256_hex(&bytes), f.sha256, "{}", f.path);
    }
    for name in ["config.json", "validation.json", "events.csv", "trajectory.json", "summary.json"] {
        assert!(m.files.iter().any(|f| f.path == name), "{name}");
    }
    assert_eq!(m.suites.get("simulate"), Some(&Status::Pass));
    assert!(out.join("timestamps.json").exists());
}

#[test]
fn records_levels_flag_writes_three_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({"records": {"records": 20000, "samples": 20000, "resamples": 10, "l1_tolerance": 1.0}}),
    );
    let out = tmp.path().join("rec");
    let st = bin()
        .args(["records", "--levels", "1,2,5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.code().is_some_and(|c| c == 0 || c == 2));
    for l in ["1", "2", "5"] {
        assert!(out.join(format!("overshoot_L{l}.csv")).exists());
    }
    assert!(!out.join("overshoot_L0.csv").exists());
    let d = std::fs::read_to_string(out.join("records_distances.csv")).unwrap();
    assert_eq!(d.lines().count(), 4);
}

#[test]
fn validate_on_broken_model_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = cosine_model();
    m["kicks"]["jumps"] = json!({"kind": "skewed", "weight_positive": 0.7, "scale_positive": 1.0, "scale_negative": 1.0});
    let cfg = write_config(tmp.path(), &json!({"model": m}));
    let out = tmp.path().join("val");
    let st = bin().arg("validate").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(false));
    assert_eq!(manifest(&out).suites.get("validate"), Some(&Status::Fail));
}

#[test]
fn schema_error_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"bogus": true}));
    let st = bin().arg("validate").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("o")).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn operational_error_leaves_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({"model": cosine_model(), "records": {"records": 10000, "samples": 1000, "levels": [1.0], "torus_levels": [1.0]}}),
    );
    let out = tmp.path().join("err");
    let st = bin().arg("records").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let m = manifest(&out);
    assert!(!m.complete);
    assert!(m.error.is_some());
    assert!(m.files.iter().any(|f| f.path == "overshoot_L1.csv"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let st = bin().args(["validate", "--seed", "99"]).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(manifest(&out).seed, 99);
}
