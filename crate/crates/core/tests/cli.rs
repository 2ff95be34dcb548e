use std::path::Path;
use std::process::Command;

use rhflow::config::Scenario;
use rhflow::pipeline::{emit_report, run_scenario, RunSettings};

const SMALL: &str = r#"
name = "small"
[grid]
shape = [64, 32]
lengths = [6.283185307179586, 3.141592653589793]
[metric]
a = [{ mean = 1.0, cos = [[1, 0.1]] }, { mean = 1.0 }]
[map]
phi = { mean = 0.0, sin = [[1, 0.3]] }
[flow]
t_final = 0.2
[lgeo]
per_axis = 3
taus = [0.05, 0.1]
[entropy]
count = 6
monotone_snapshots = 3
"#;

const T3: &str = r#"
name = "t3"
[grid]
shape = [48, 16, 16]
lengths = [6.283185307179586, 3.141592653589793, 3.141592653589793]
[metric]
a = [{ mean = 1.0 }, { mean = 1.0, cos = [[1, 0.3]] }, { mean = 1.0, cos = [[1, 0.3]] }]
[map]
phi = { mean = 0.0, sin = [[1, 0.05]] }
[coupling]
alpha0 = 1.5
[flow]
t_final = 0.3
[sobolev]
pairs = 4
[tolerances]
J_chi_bound = 2e-3
"#;

fn rhflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rhflow")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn three_dimensional_config_enables_sobolev() {
    let s = Scenario::from_toml(T3).unwrap();
    assert_eq!(s.dim(), 3);
    assert!(s.suite_enabled("sobolev"));
    assert!(!s.suite_enabled("harnack"));
    assert_eq!(s.sobolev.pairs, 4);
    assert_eq!(s.tolerances(1.0).get("J_chi_bound"), 2e-3);
    s.validate().unwrap();
}

#[test]
fn increasing_coupling_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &format!("{SMALL}\n[coupling]\nslope = 0.5\n"));
    let out = rhflow(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "flow"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-increasing"), "{err}");
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "name = \"x\"\n[grid]\nshape = [32, 16]\nshap = 3\n[metric]\na = [{ mean = 1.0 }, { mean = 1.0 }]\n");
    let out = rhflow(&["--config", &cfg, "flow"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn unknown_builtin_is_config_error() {
    let out = rhflow(&["--scenario", "klein-bottle", "flow"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn list_names_builtins() {
    let out = rhflow(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for b in Scenario::BUILTINS {
        assert!(text.contains(b));
    }
}

#[test]
fn empty_selection_passes_with_no_checks() {
    let s = Scenario::from_toml(SMALL).unwrap();
    let b = run_scenario(&s, Some(&[]), RunSettings::default()).unwrap();
    assert!(b.report.suites.is_empty());
    assert!(b.report.pass);
    assert_eq!(b.exit_code(), 0);
}

#[test]
fn full_run_report_schema_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = rhflow(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "all"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);
    let pass = report["pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if pass { 0 } else { 1 }));
    let suites = report["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 5);
    for s in suites {
        for c in s["checks"].as_array().unwrap() {
            for key in ["check", "slice_time", "max_violation", "tolerance", "pass", "refinement_order"] {
                assert!(c.get(key).is_some(), "{key} missing in {c}");
            }
        }
    }
    let series: Vec<&str> = report["series"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let csvs: Vec<&&str> = series.iter().filter(|s| s.ends_with(".csv")).collect();
    assert!(csvs.len() >= 5, "{series:?}");
    for name in ["rho_phi.csv", "mu_tau.csv", "lyh_margins.csv", "reduced_volume.csv"] {
        assert!(series.contains(&name), "{name}");
    }
    for f in csvs {
        let text = std::fs::read_to_string(out_dir.join(f)).unwrap();
        let mut lines = text.lines();
        let cols = lines.next().unwrap().split(',').count();
        assert!(cols >= 2);
        let mut rows = 0;
        for l in lines {
            assert_eq!(l.split(',').count(), cols, "{f}: {l}");
            rows += 1;
        }
        assert!(rows > 0, "{f} is empty");
    }
}

#[test]
fn rerun_is_byte_identical() {
    let s = Scenario::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let only = ["flow", "kernel", "entropy", "lgeo"];
    for sub in ["a", "b"] {
        let b = run_scenario(&s, Some(&only), RunSettings::default()).unwrap();
        emit_report(&b, &dir.path().join(sub)).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for n in names {
        let a = std::fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn three_dimensional_run_refuses_without_positive_s() {
    let s = Scenario::from_toml(T3).unwrap();
    let b = run_scenario(&s, Some(&["sobolev"]), RunSettings::default()).unwrap();
    let c = b.check("kernel_sup_bound").unwrap();
    assert!(c.is_refusal() && !c.pass);
    assert!(b.check("talenti").unwrap().pass);
    assert!(b.documents.iter().any(|d| d.0 == "sobolev_bounds.json"));
    assert_eq!(b.exit_code(), 1);
}
