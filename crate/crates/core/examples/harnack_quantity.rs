//! Harnack quantity v of a conjugate kernel on a coupled run, its evolution
//! identity, and the Li-Yau-Hamilton bound along a fixed point.

use rhflow::config::Scenario;
use rhflow::harnack;
use rhflow::heat::{self, KernelOptions};
use rhflow::pipeline::run_flow;

fn main() -> rhflow::Result<()> {
    let s = Scenario::builtin("t2-coupled").expect("built-in");
    let h = run_flow(&s, 1.0)?;
    let k = heat::solve_conjugate(&h, s.center(), s.flow.t_final, KernelOptions::default())?;
    let fields = harnack::compute_all(&k, &h)?;
    println!("{}", serde_json::to_string(&harnack::harnack_sign_check(&fields, 3e-2))?);
    let b = harnack::boxstar_v(&k, &h, &fields, Default::default())?;
    println!("box* v residual {:.3e}, sup rhs {:.3e} over {} slices", b.residual, b.max_rhs, b.slices);
    let y = k.y;
    let lyh = harnack::lyh_along_curve(&k, &h, "center", &move |_| y)?;
    println!("{}", serde_json::to_string(&harnack::lyh_report(&lyh, 5e-3))?);
    Ok(())
}
