//! Runs one suite of a built-in scenario and writes its report bundle.
//! Usage: scenario_report [scenario] [suite] [out-dir]

use rhflow::config::Scenario;
use rhflow::pipeline::{emit_report, run_scenario, RunSettings};

fn main() -> rhflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("flat-static", |s| s.as_str());
    let suite = args.get(1).map_or("kernel", |s| s.as_str());
    let out = args.get(2).map_or("out/example", |s| s.as_str());
    let s = Scenario::builtin(name).ok_or_else(|| rhflow::Error::Config(format!("no scenario {name}")))?;
    let b = run_scenario(&s, Some(&[suite]), RunSettings::default())?;
    for c in b.report.suites.iter().flat_map(|s| &s.checks) {
        println!("{:<24} {:<5} {:.3e}", c.check, c.pass, c.max_violation);
    }
    for p in emit_report(&b, std::path::Path::new(out))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
