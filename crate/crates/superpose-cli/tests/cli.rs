//! End-to-end tests of the `superpose` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superpose")).args(args).output().expect("binary runs")
}

fn text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn build_writes_one_inner_file_per_family_and_all_properties_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["build", "--n", "1", "--kmax", "4", "--samples", "2000", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 1..=3 {
        assert!(dir.path().join(format!("inner_{i}.json")).exists());
    }
    assert!(!dir.path().join("inner_4.json").exists());
    let v: serde_json::Value = serde_json::from_str(&text(&dir.path().join("verify.json"))).unwrap();
    assert_eq!(v["passed"], true);
    let levels = v["cover"].as_array().unwrap();
    assert_eq!(levels.len(), 4);
    for lv in levels {
        let props: Vec<u64> =
            lv["properties"].as_array().unwrap().iter().map(|p| p["property"].as_u64().unwrap()).collect();
        assert_eq!(props, vec![1, 2, 3, 4, 5, 6, 7]);
        assert!(lv["properties"].as_array().unwrap().iter().all(|p| p["status"] == "pass"));
    }
    assert!(v["ladder"]["checks"].as_array().unwrap().iter().all(|c| c["status"] == "pass"));
    let cover: serde_json::Value = serde_json::from_str(&text(&dir.path().join("cover.json"))).unwrap();
    assert_eq!(cover["levels"][0]["primes"], serde_json::json!(["2", "3", "5"]));
}

#[test]
fn epsilon_one_of_three_tenths_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["build", "--eps1", "0.3", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ε_1 < 1/4"), "{}", stderr(&o));
    assert!(!dir.path().join("cover.json").exists());
}

#[test]
fn zero_function_needs_no_sweeps_and_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--fn", "zero", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sweeps: 0"), "{}", stdout(&o));
    assert!(stdout(&o).contains("certified sup error on [-3, 3]^1: 0e0"), "{}", stdout(&o));
    let csv = text(&dir.path().join("residuals.csv"));
    assert_eq!(csv, "s,sweep,residual_sup\n1,0,0\n2,0,0\n3,0,0\n");
}

#[test]
fn residuals_decrease_per_annulus_and_failures_name_the_annulus() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--fn", "ramp", "--window", "3", "--tol", "1e-3", "--out", dir.path().to_str().unwrap()]);
    let csv = text(&dir.path().join("residuals.csv"));
    let mut last: Option<(i64, f64)> = None;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 3);
        let (s, r): (i64, f64) = (cols[0].parse().unwrap(), cols[2].parse().unwrap());
        if let Some((ps, pr)) = last {
            if ps == s {
                assert!(r < pr, "annulus {s}: {r} after {pr}");
            }
        }
        last = Some((s, r));
    }
    if !o.status.success() {
        assert!(stderr(&o).contains("annulus "), "{}", stderr(&o));
    }
    let model: serde_json::Value = serde_json::from_str(&text(&dir.path().join("model.json"))).unwrap();
    assert_eq!(model["coords"].as_array().unwrap().len(), 3);
    assert_eq!(model["inner"].as_array().unwrap().len(), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = d.path().to_str().unwrap();
        run(&["solve", "--fn", "sin", "--fn-param", "freq=2", "--window", "2", "--out", out]);
        let o = run(&["build", "--kmax", "2", "--samples", "500", "--seed", "7", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["model.json", "residuals.csv", "verify.json", "cover.json", "inner_1.json", "inner_3.json"] {
        assert_eq!(text(&a.path().join(f)), text(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn eval_flags_uncertified_points_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["solve", "--fn", "hat", "--window", "2", "--out", out]);
    let model = dir.path().join("model.json");
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "# no points\n").unwrap();
    let o = run(&["eval", "--model", model.to_str().unwrap(), "--points", empty.to_str().unwrap(), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(text(&dir.path().join("eval.csv")), "x,f(x),F(x),|diff|\n");

    let pts = dir.path().join("pts.txt");
    std::fs::write(&pts, "0.25\n20\n").unwrap();
    let o = run(&["eval", "--model", model.to_str().unwrap(), "--points", pts.to_str().unwrap(), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = text(&dir.path().join("eval.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[2].starts_with("20,0,uncertified"), "{csv}");
    assert!(lines[3].starts_with("max,,,"), "{csv}");
}

#[test]
fn uniform_eval_stays_within_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["solve", "--fn", "gauss", "--window", "2", "--out", out]);
    let model = dir.path().join("model.json");
    let o = run(&["eval", "--model", model.to_str().unwrap(), "--uniform", "1000", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = text(&dir.path().join("eval.csv"));
    let max: f64 = csv.lines().last().unwrap().trim_start_matches("max,,,").parse().unwrap();
    let m: serde_json::Value = serde_json::from_str(&text(&model)).unwrap();
    let hex = m["cert"][0]["sup_error"].as_str().unwrap();
    let cert = superpose::arith::parse_hex_f64(hex).unwrap();
    assert_eq!(csv.lines().count(), 1002);
    assert!(max <= cert, "max diff {max} exceeds certificate {cert}");
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n": 1, "fn": "const", "fn_params": {"c": 0.0}, "window": 1.5}"#).unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("[-1.5, 1.5]^1: 0e0"), "{}", stdout(&o));
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--window", "1", "--out", out]);
    assert!(stdout(&o).contains("[-1, 1]^1"), "{}", stdout(&o));

    std::fs::write(&cfg, r#"{"n": 1, "colour": 3}"#).unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert!(!o.status.success());
}

#[test]
fn verify_only_rechecks_the_certificate_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["solve", "--fn", "ramp", "--window", "2", "--out", out]);
    let o = run(&["solve", "--fn", "ramp", "--window", "2", "--out", out, "--verify-only"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["solve", "--fn", "ramp", "--window", "2", "--tol", "0.5", "--out", out, "--verify-only"]);
    assert!(!o.status.success());

    let path = dir.path().join("model.json");
    let mut m: serde_json::Value = serde_json::from_str(&text(&path)).unwrap();
    m["coords"].as_array_mut().unwrap().pop();
    std::fs::write(&path, m.to_string()).unwrap();
    let pts = dir.path().join("pts.txt");
    std::fs::write(&pts, "0.5\n").unwrap();
    let o = run(&["eval", "--model", path.to_str().unwrap(), "--points", pts.to_str().unwrap(), "--out", out]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("coordinate functions"), "{}", stderr(&o));
}
