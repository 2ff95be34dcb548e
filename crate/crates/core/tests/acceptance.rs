//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 8 needs a torus with positive S at time 0, which does not exist;
//! it runs in full and is expected to fail. Any other failure fails the run.

use std::path::Path;
use std::time::Instant;

use rhflow::config::Scenario;
use rhflow::harnack::{boxstar_v, compute_all, harnack_sign_check};
use rhflow::heat::{solve_conjugate, KernelOptions};
use rhflow::pipeline::{emit_report, run_flow, run_scenario, Bundle, RunSettings};
use rhflow::report::observed_order;
use rhflow::{flow, Result};

const EXPECTED_TO_FAIL: &[u32] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn builtin(name: &str) -> Scenario {
    Scenario::builtin(name).expect("built-in scenario")
}

fn passes(b: &Bundle, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = vec![];
    for n in names {
        match b.check(n) {
            Some(c) => {
                ok &= c.pass;
                parts.push(format!("{n}={:.3e}{}", c.max_violation, if c.pass { "" } else { "(fail)" }));
            }
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    (ok, parts.join(" "))
}

struct HarnackLevel {
    sign: f64,
    boxstar: f64,
    max_rhs: f64,
}

fn harnack_level(s: &Scenario, scale: f64) -> Result<HarnackLevel> {
    let h = run_flow(s, scale)?;
    let opts = KernelOptions { tau0: s.kernel.tau0, steps_per_log: s.kernel.steps_per_log, ..Default::default() };
    let k = solve_conjugate(&h, s.center(), s.flow.t_final, opts)?;
    let f = compute_all(&k, &h)?;
    let b = boxstar_v(&k, &h, &f, Default::default())?;
    Ok(HarnackLevel { sign: harnack_sign_check(&f, 0.0).max_violation, boxstar: b.residual, max_rhs: b.max_rhs })
}

fn criterion1() -> Result<Outcome> {
    let t0 = Instant::now();
    let b = run_scenario(&builtin("flat-static"), Some(&["kernel", "harnack", "lgeo"]), RunSettings::default())?;
    let secs = t0.elapsed().as_secs_f64();
    let (ok, d) = passes(&b, &["flat_oracle", "flat_v_near_center", "flat_ell"]);
    outcome(ok && secs < 60.0, format!("{d} runtime {secs:.1}s"))
}

fn criteria2_3() -> Result<(Outcome, Outcome)> {
    let s = builtin("t2-coupled");
    let tol = s.tolerances(1.0).get("harnack_sign");
    let t0 = Instant::now();
    let a = harnack_level(&s, 1.0)?;
    let b = harnack_level(&s, 2.0)?;
    let secs = t0.elapsed().as_secs_f64();
    // a nonpositive fine value counts as shrinking by any factor
    let shrunk = b.sign <= 0.0 || a.sign / b.sign >= 2.0;
    let factor = if b.sign > 0.0 { format!("factor {:.2}", a.sign / b.sign) } else { "fine level nonpositive".into() };
    let c2 = a.sign <= tol && shrunk && secs < 600.0;
    let o2 = Outcome {
        pass: c2,
        detail: format!("max v/H {:.4e} -> {:.4e} ({factor}), tol {tol:.1e}, runtime {secs:.0}s", a.sign, b.sign),
    };
    let order = observed_order(a.boxstar, b.boxstar, 2.0);
    let rhs = a.max_rhs.max(b.max_rhs);
    let c3 = order.is_some_and(|o| o >= 1.0) && rhs <= 1e-8;
    let o3 = Outcome {
        pass: c3,
        detail: format!("residual {:.4e} -> {:.4e} order {:.2}, max rhs {rhs:.3e}", a.boxstar, b.boxstar, order.unwrap_or(f64::NAN)),
    };
    Ok((o2, o3))
}

fn criterion4(b: &Bundle) -> Result<Outcome> {
    let lyh: Vec<_> = b.report.suites.iter().flat_map(|s| &s.checks).filter(|c| c.check.starts_with("lyh_")).collect();
    let ok = lyh.len() >= 5
        && lyh.iter().all(|c| c.pass)
        && ["lyh_geodesic", "lyh_l_minimizer"].iter().all(|n| lyh.iter().any(|c| c.check == *n));
    let worst = lyh.iter().map(|c| c.max_violation).fold(f64::NEG_INFINITY, f64::max);
    outcome(ok, format!("{} curves, worst margin violation {worst:.3e}", lyh.len()))
}

fn criterion5() -> Result<Outcome> {
    let s = builtin("t2-coupled");
    let mut e = vec![];
    let mut v = vec![];
    for scale in [0.5, 1.0, 2.0] {
        let h = run_flow(&s, scale)?;
        e.push(flow::evol_s_residual(&h)?.max_violation);
        v.push(flow::volume_identity_residual(&h)?.max_violation);
    }
    let ord = |x: &[f64]| {
        let a = observed_order(x[0], x[1], 2.0).unwrap_or(f64::NAN);
        let b = observed_order(x[1], x[2], 2.0).unwrap_or(f64::NAN);
        (a, b)
    };
    let (e1, e2) = ord(&e);
    let (v1, v2) = ord(&v);
    let ok = [e1, e2, v1, v2].iter().all(|o| *o >= 2.0);
    outcome(ok, format!("evolution orders {e1:.2}, {e2:.2}; volume orders {v1:.2}, {v2:.2}"))
}

fn criterion6(b: &Bundle) -> Result<Outcome> {
    let (ok, d) = passes(b, &["w_scaling", "mu_el_residual", "mu_limit_trend", "kernel_upper_bound", "mu_monotonicity"]);
    let t = &b.report.tolerances;
    let strict = t.get("w_scaling") <= 1e-8 && t.get("mu_monotonicity") <= 2e-3 && t.get("el_residual") <= 1e-3;
    let snaps = b.report.scenario.entropy.monotone_snapshots;
    let sweep = b.report.scenario.entropy.count;
    outcome(ok && strict && snaps >= 8 && sweep >= 16, d)
}

fn criterion7(b: &Bundle) -> Result<Outcome> {
    let (ok, d) = passes(b, &["lphi_sandwich", "h_le_ell"]);
    let rows = b.tables.iter().find(|t| t.file == "lgeo_ell.csv").map_or(0, |t| t.rows.len());
    outcome(ok && rows >= 100, format!("{d}, {rows} (point, tau) samples"))
}

fn criterion8() -> Result<Outcome> {
    let b = run_scenario(&builtin("t3-positive-S"), None, RunSettings::default())?;
    let suite = b.report.suites.iter().find(|s| s.name == "sobolev");
    let Some(suite) = suite else {
        return outcome(false, "sobolev suite did not run");
    };
    let failing: Vec<String> = suite
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} [{}]", c.check, c.notes.join("; ")))
        .collect();
    let k = b.check("talenti").map_or(f64::NAN, |c| c.max_violation);
    if failing.is_empty() {
        outcome(true, format!("talenti error {k:.2e}"))
    } else {
        outcome(false, format!("talenti error {k:.2e}; failing: {}", failing.join(", ")))
    }
}

fn same_tree(a: &Path, b: &Path) -> std::io::Result<bool> {
    let mut names: Vec<_> = std::fs::read_dir(a)?.map(|e| e.map(|e| e.file_name())).collect::<std::io::Result<_>>()?;
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b)?.map(|e| e.map(|e| e.file_name())).collect::<std::io::Result<_>>()?;
    other.sort();
    if names != other {
        return Ok(false);
    }
    for n in names {
        if std::fs::read(a.join(&n))? != std::fs::read(b.join(&n))? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn criterion9(flat: &Bundle, coupled: &Bundle) -> Result<Outcome> {
    let (m1, d1) = passes(flat, &["conjugate_mass"]);
    let (m2, d2) = passes(coupled, &["conjugate_mass"]);
    let sg_flat = flat.check("semigroup").map_or(f64::NAN, |c| c.max_violation);
    let sg_coupled = coupled.check("semigroup").map_or(f64::NAN, |c| c.max_violation);
    let mass_tol = coupled.report.tolerances.get("kernel_mass");
    let dir = tempfile::tempdir()?;
    let (x, y) = (dir.path().join("first"), dir.path().join("second"));
    emit_report(coupled, &x)?;
    let again = run_scenario(&builtin("t2-coupled"), None, RunSettings::default())?;
    emit_report(&again, &y)?;
    let same = same_tree(&x, &y)?;
    let ok = m1 && m2 && mass_tol <= 1e-4 && sg_flat < 1e-3 && sg_coupled < 2e-2 && same;
    outcome(ok, format!("flat {d1}, coupled {d2}; semigroup {sg_flat:.3e} / {sg_coupled:.3e}; byte-identical rerun {same}"))
}

fn report(n: u32, r: Result<Outcome>, unexpected: &mut Vec<u32>) {
    let o = r.unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
    println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass && !EXPECTED_TO_FAIL.contains(&n) {
        unexpected.push(n);
    }
}

fn main() {
    let mut bad = vec![];
    let flat = run_scenario(&builtin("flat-static"), None, RunSettings::default());
    let coupled = run_scenario(&builtin("t2-coupled"), None, RunSettings::default());
    report(1, criterion1(), &mut bad);
    match criteria2_3() {
        Ok((a, b)) => {
            report(2, Ok(a), &mut bad);
            report(3, Ok(b), &mut bad);
        }
        Err(e) => {
            let msg = e.to_string();
            report(2, Err(e), &mut bad);
            report(3, outcome(false, format!("error: {msg}")), &mut bad);
        }
    }
    let fail = |e: &rhflow::Error| Err(rhflow::Error::numerical("acceptance", format!("t2-coupled run failed: {e}")));
    report(4, coupled.as_ref().map_or_else(fail, criterion4), &mut bad);
    report(5, criterion5(), &mut bad);
    report(6, coupled.as_ref().map_or_else(fail, criterion6), &mut bad);
    report(7, coupled.as_ref().map_or_else(fail, criterion7), &mut bad);
    report(8, criterion8(), &mut bad);
    let c9 = match (&flat, &coupled) {
        (Ok(f), Ok(c)) => criterion9(f, c),
        (Err(e), _) | (_, Err(e)) => fail(e),
    };
    report(9, c9, &mut bad);
    if !bad.is_empty() {
        eprintln!("unexpected failures: {bad:?}");
        std::process::exit(1);
    }
}
