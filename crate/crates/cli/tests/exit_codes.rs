use std::path::Path;
use std::process::Command;

fn daovfl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_daovfl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_sweep_compare_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ok.json",
        r#"{"horizon": 5, "regret": false, "engine": {"learning_period": 0}}"#,
    );
    let out = dir.path().join("run");
    let o = daovfl(&["run", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(out.join("manifest.json").exists());

    let ni = write_config(
        dir.path(),
        "ni.json",
        r#"{"horizon": 5, "regret": false, "engine": {"noise_mode": "NI", "learning_period": 0}}"#,
    );
    let sweep = dir.path().join("sweep");
    for (c, sub) in [(&cfg, "ne"), (&ni, "ni")] {
        let o = daovfl(&[
            "sweep",
            "--config",
            c,
            "--seeds",
            "0..1",
            "--out",
            sweep.join(sub).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(sweep.join("ne/seed-1/metrics.csv").exists());

    let table = dir.path().join("cmp.csv");
    let pattern = format!("{}/*/seed-*/metrics.csv", sweep.display());
    let o = daovfl(&[
        "compare",
        "--glob",
        &pattern,
        "--group-by",
        "engine.noise_mode",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("cmp.summary.csv")).unwrap();
    assert!(summary.contains("NE") && summary.contains("NI"), "{summary}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let typo = write_config(dir.path(), "typo.json", r#"{"horizn": 5}"#);
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"horizon": 10, "engine": {"learning_period": 40}}"#,
    );
    for args in [
        vec!["run", "--config", &typo, "--seed", "0", "--out", out],
        vec!["run", "--config", &bad, "--seed", "0", "--out", out],
        vec!["run", "--config", "/nonexistent.json", "--seed", "0", "--out", out],
        vec!["sweep", "--config", &bad, "--seeds", "0..1", "--out", out],
        vec!["sweep", "--config", &typo, "--seeds", "3..1", "--out", out],
    ] {
        let o = daovfl(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn divergence_exits_3_with_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "hot.json",
        r#"{"horizon": 50, "regret": false, "engine": {"eta": 1e6}}"#,
    );
    let out = dir.path().join("run");
    let o = daovfl(&["run", "--config", &cfg, "--seed", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("FAILED").exists());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().count() < 51);
}
