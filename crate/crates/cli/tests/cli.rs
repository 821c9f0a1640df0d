use std::process::{Command, Stdio};

fn coupling() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coupling"));
    cmd.stdout(Stdio::null()).stderr(Stdio::null());
    cmd
}

#[test]
fn paths_smoke_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths");
    let status = coupling()
        .args(["paths", "--paths", "200", "--steps", "8", "--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["kind"], "paths");
    assert!(out.join("paths.csv").exists());
}

#[test]
fn deterministic_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = coupling()
            .args(["cv", "--paths", "300", "--steps", "8", "--deterministic", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read(out.join("cv.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"kind": "cv", "steps": 0}"#).unwrap();
    let status = coupling().args(["cv", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(1));
    std::fs::write(&cfg, r#"{"kind": "paths"}"#).unwrap();
    let status = coupling().args(["cv", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn failed_verdict_exits_with_two() {
    // beta = 1/4 makes the ratio blow up at small r
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("frac.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "fracpot", "steps": 8, "paths": 2000,
            "fracpot": {"case": "II", "p": 2.0, "entries": [
              {"slot": "b", "driver": {"kind": "brownian_process"}, "beta": 0.25, "rate": {"kind": "bounded", "bound": 1.0}}]}}"#,
    )
    .unwrap();
    let status = coupling()
        .args(["fracpot", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
