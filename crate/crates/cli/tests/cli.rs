use std::process::Command;

fn vmip(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vmip")).args(args).output().unwrap()
}

#[test]
fn toy_run_succeeds() {
    let out = vmip(&["--gen", "toy", "--strategy", "zero", "--strategy", "fixed-indef"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("zero") && stdout.contains("fixed-indef"));
}

#[test]
fn r_factor_at_limit_is_config_error() {
    let out = vmip(&["--gen", "toy", "--strategy", "fixed-indef", "--r-factor", "1.0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must exceed"));
}

#[test]
fn missing_instance_is_io_error() {
    let out = vmip(&["--instance", "/nonexistent.json", "--strategy", "zero"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn artifacts_and_instance_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = vmip(&[
        "--gen", "qq", "--n", "6", "--rows", "4", "--seed", "3", "--strategy", "bfgs", "--diagnostics", "--out", d,
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
    let fp = results["instance"].as_str().unwrap().to_string();
    assert_eq!(results["runs"][0]["strategy"], "bfgs");
    for f in ["trace_bfgs.csv", "certification_bfgs.json", "diagnostics_bfgs.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let again = tempfile::tempdir().unwrap();
    let inst = dir.path().join("instance.json");
    let out = vmip(&[
        "--instance",
        inst.to_str().unwrap(),
        "--strategy",
        "zero",
        "--out",
        again.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(again.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(results["instance"].as_str().unwrap(), fp);
}
