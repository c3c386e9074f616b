use std::process::Command;

fn atlas() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_atlas"));
    cmd.env_remove("ATLAS_OUTPUT_DIR");
    cmd
}

fn stability_json(extra: &[&str]) -> serde_json::Value {
    let mut args = vec![
        "stability",
        "--l-e",
        "1",
        "--l-ep",
        "0",
        "--l-d",
        "1",
        "--l-dp",
        "0",
        "--eps",
        "0",
    ];
    args.extend_from_slice(extra);
    let out = atlas().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn stability_reports_both_branches() {
    let v = stability_json(&["--eta", "0.1", "--delta", "1"]);
    assert!((v["eta_eff"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(v["check"]["holds"], true);
    let v = stability_json(&[
        "--eta",
        "0",
        "--delta",
        "0.1",
        "--singular",
        "0.5",
        "2",
        "--mu",
        "0.01",
        "0.1",
        "2",
    ]);
    assert_eq!(v["gamma"], 0.0);
    assert_eq!(v["nondeg_lower_bound"], 1.0);
    assert_eq!(v["mu_condition"], true);
}

#[test]
fn stability_with_eta_one_reports_failure() {
    let v = stability_json(&["--eta", "1", "--delta", "0.5"]);
    assert_eq!(v["check"]["holds"], false);
    assert!(v["eta_eff"].is_null());
}

#[test]
fn negative_constant_is_a_usage_error() {
    let out = atlas()
        .args([
            "stability",
            "--l-e",
            "-1",
            "--l-ep",
            "0",
            "--l-d",
            "1",
            "--l-dp",
            "0",
            "--eps",
            "0",
            "--eta",
            "0",
            "--delta",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"name\": \"x\"}").unwrap();
    let out = atlas().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = atlas().args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_honours_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = atlas()
        .args(["run", "sphere", "--seeds", "7", "--epochs", "20"])
        .env("ATLAS_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("per_trial.csv").is_file());
    assert!(dir.path().join("seed_7/signs.csv").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed 7:"));
}

#[test]
fn failing_seeds_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("klein.json");
    let preset = atlas().args(["preset", "klein"]).output().unwrap();
    let text = String::from_utf8(preset.stdout)
        .unwrap()
        .replace("\"m\": 4.0", "\"m\": 0.5");
    std::fs::write(&config, text).unwrap();
    let out = atlas()
        .arg("run")
        .arg(&config)
        .args(["--seeds", "1"])
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_passes() {
    let out = atlas().args(["oracle", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["coboundary_agreements"], v["coboundary_cases"]);
}

#[test]
fn presets_parse_back() {
    for name in ["sphere", "mobius", "klein", "rp2"] {
        let out = atlas().args(["preset", name]).output().unwrap();
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["name"], name);
    }
}
