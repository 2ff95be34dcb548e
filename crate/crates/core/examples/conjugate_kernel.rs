//! Conjugate heat kernel on the flat square torus against the image sum.

use rhflow::flow::{self, CouplingSchedule, FlowState, RunOptions};
use rhflow::geometry::{ReducedMetric, ScalarMap};
use rhflow::grid::PeriodicGrid;
use rhflow::heat::{self, KernelOptions, NEAR_CENTER};
use std::f64::consts::PI;

fn main() -> rhflow::Result<()> {
    let grid = PeriodicGrid::new(&[96, 96])?;
    let init = FlowState::new(0.0, ReducedMetric::flat(grid), ScalarMap::constant(&grid, 0.0))?;
    let h = flow::run(&init, &CouplingSchedule::constant(1.0), RunOptions { t_final: 0.1, dt: None, snapshot_every: 1 })?;
    let y = [PI, PI, 0.0];
    let k = heat::solve_conjugate(&h, y, 0.1, KernelOptions::default())?;
    println!("tau0 {:.4e}, {} slices", k.tau0, k.slices.len());
    println!("{:>10} {:>14} {:>14}", "tau", "mass - 1", "rel err");
    for i in (0..k.slices.len()).step_by((k.slices.len() / 8).max(1)) {
        let exact = heat::periodized_gaussian(&grid, y, k.tau(i), 6);
        let m = exact.max();
        let err = k.slices[i]
            .data
            .iter()
            .zip(&exact.data)
            .filter(|p| *p.1 >= NEAR_CENTER * m)
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0, f64::max);
        println!("{:>10.4e} {:>14.3e} {:>14.3e}", k.tau(i), k.mass[i] - 1.0, err);
    }
    println!("{}", serde_json::to_string(&heat::mass_report(&k, 1e-4))?);
    Ok(())
}
