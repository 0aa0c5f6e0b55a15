use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn regprod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regprod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_cfg(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    regprod(&args)
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error on stderr");
    serde_json::from_str(line).expect("stderr is JSON")
}

/// Copy of a checked-in config with a few fields overridden.
fn patched(name: &str, dir: &Path, patch: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap();
    patch(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn nash_writes_header_and_one_row_per_node() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("nash", &configs().join("fig2_nash.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = csv_lines(&tmp.path().join("nash_coeffs.csv"));
    assert_eq!(lines.len(), 1002);
    assert_eq!(lines[0], "t,A,B,C,D,E,F,At,Bt,Ct,Dt,Et,Ft");
    assert!(lines[1].starts_with("0.0,"));
    assert!(lines[1001].starts_with("1.0,"));
    // coefficients vanish at the horizon
    assert!(lines[1001].split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary.is_object());
}

#[test]
fn principal_scenarios_write_riccati_table() {
    for (cmd, cfg) in [("two-firm", "two_firm.json"), ("single-firm", "single_firm.json")] {
        let tmp = tempfile::tempdir().unwrap();
        let o = run_cfg(cmd, &configs().join(cfg), tmp.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let lines = csv_lines(&tmp.path().join("riccati_coeffs.csv"));
        assert_eq!(lines.len(), 1002);
        assert_eq!(lines[0], "t,A11,A12,A22,B1,B2,C");
    }
}

#[test]
fn best_response_file_per_opponent() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("best-response", &configs().join("fig1_best_response.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..3 {
        let lines = csv_lines(&tmp.path().join(format!("best_response_firm1_opp{k}.csv")));
        assert_eq!(lines.len(), 1002);
        assert_eq!(lines[0], "t,A,B,C,D,E,F");
    }
}

#[test]
fn verify_reports_small_residuals() {
    for (cfg, kind) in [("two_firm.json", "two-firm"), ("single_firm.json", "single-firm"), ("fig2_nash.json", "nash")] {
        let tmp = tempfile::tempdir().unwrap();
        let o = run_cfg("verify", &configs().join(cfg), tmp.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(tmp.path().join("residuals.json")).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v.is_object(), "{kind}");
    }
}

#[test]
fn simulate_small_runs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["simulate_nash.json", "simulate_two_firm.json"] {
        let cfg = patched(name, tmp.path(), |v| v["numerics"]["n_paths"] = 2000.into());
        let a = tmp.path().join(format!("{name}_a"));
        let b = tmp.path().join(format!("{name}_b"));
        for out in [&a, &b] {
            let o = run_cfg("simulate", &cfg, out, &["--seed", "3"]);
            assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let sa = std::fs::read(a.join("summary.json")).unwrap();
        assert_eq!(sa, std::fs::read(b.join("summary.json")).unwrap());
        let c = tmp.path().join(format!("{name}_c"));
        run_cfg("simulate", &cfg, &c, &["--seed", "4"]);
        assert_ne!(sa, std::fs::read(c.join("summary.json")).unwrap());
    }
}

#[test]
fn nash_output_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run_cfg("nash", &configs().join("fig2_nash.json"), out, &[]);
    }
    assert_eq!(
        std::fs::read(a.join("nash_coeffs.csv")).unwrap(),
        std::fs::read(b.join("nash_coeffs.csv")).unwrap()
    );
}

#[test]
fn invalid_parameter_exits_one_and_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched("two_firm.json", tmp.path(), |v| v["model"]["gamma1"] = (-1.0).into());
    let o = run_cfg("two-firm", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["field"], "gamma1");
}

#[test]
fn kind_mismatch_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("nash", &configs().join("two_firm.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "kind");
}

#[test]
fn unknown_subcommand_exits_one() {
    let o = regprod(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "usage");
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("nash", &tmp.path().join("absent.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blow_up_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched("fig2_nash.json", tmp.path(), |v| v["model"]["horizon"] = 5.0.into());
    let o = run_cfg("nash", &cfg, &tmp.path().join("out"), &["--literal-signs"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "numerical");
}
