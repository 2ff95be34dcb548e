//! mu(tau) for the coupled entropy on a log sweep, with EL certificates.

use rhflow::config::Scenario;
use rhflow::entropy::{self, MuOptions};

fn main() -> rhflow::Result<()> {
    let s = Scenario::builtin("t2-coupled").expect("built-in");
    let init = s.initial_state(1.0)?;
    let alpha = s.schedule()?.alpha(0.0);
    let taus = entropy::log_tau_grid(0.01, 0.3, 16);
    let curve = entropy::mu_curve(&init, alpha, &taus, MuOptions::default())?;
    println!("{:>10} {:>14} {:>10} {:>6}", "tau", "mu", "EL", "iters");
    for p in &curve.points {
        println!("{:>10.4e} {:>14.6e} {:>10.2e} {:>6}", p.tau, p.mu, p.el_residual, p.iterations);
    }
    println!("{}", serde_json::to_string(&entropy::mu_limit_trend(&curve, 2e-3, 2e-3))?);
    Ok(())
}
