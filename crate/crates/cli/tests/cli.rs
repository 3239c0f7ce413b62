use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aware-flight"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn short_config(dir: &Path, horizon: f64) -> String {
    let path = dir.join("scenario.json");
    let text = format!(r#"{{"simulation": {{"horizon": {horizon}}}, "scheduler": {{"grid": [1.0, 1.5, 2.0]}}}}"#);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"vehicle": {"mass": -1.0}}"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&cfg, r#"{"vehicel": {}}"#).unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let o = run(&["simulate", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_controller_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.5);
    let o = run(&["simulate", "--config", &cfg, "--controller", "bang-bang", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1.0);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    for kind in ["fixed-low", "fixed-high"] {
        let o = run(&["simulate", "--config", &cfg, "--controller", kind, "--out", out_s, "--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let steps = std::fs::read_to_string(out.join("steps_fixed-low_d1.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1 + 1001);
    assert!(out.join("metrics_fixed-high_d1.json").exists());

    let o = run(&["report", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(table.contains("fixed-low"));
    assert!(table.contains("fixed-high"));
}

#[test]
fn report_without_metrics_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn strict_infeasible_sweep_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1.0);
    let out = dir.path().join("out");
    let args = [
        "sweep", "--config", &cfg, "--controller", "aware", "--dist-scale", "3", "--eps", "1e-6", "--out",
        out.to_str().unwrap(),
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("selection_aware_d3.json")).unwrap()).unwrap();
    assert_eq!(sel["feasible"], false);
    assert_eq!(sel["records"].as_array().unwrap().len(), 3);

    let mut strict = args.to_vec();
    strict.push("--strict");
    let o = run(&strict);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1.0);
    let o = run(&["simulate", "--config", &cfg, "--dist-scale", "1e300", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
