//! Reduced distance on a flat torus: l = d^2 / 4 tau, and reduced volume
//! close to one.

use rhflow::flow::{self, CouplingSchedule, FlowState, RunOptions};
use rhflow::geometry::{ReducedMetric, ScalarMap};
use rhflow::grid::PeriodicGrid;
use rhflow::lgeodesic;
use std::f64::consts::PI;

fn main() -> rhflow::Result<()> {
    let grid = PeriodicGrid::new(&[64, 64])?;
    let init = FlowState::new(0.0, ReducedMetric::flat(grid), ScalarMap::constant(&grid, 0.0))?;
    let h = flow::run(&init, &CouplingSchedule::constant(1.0), RunOptions { t_final: 0.1, dt: None, snapshot_every: 1 })?;
    let y = [PI, PI, 0.0];
    let field = lgeodesic::reduced_distance_field(&h, y, 0.1, &[0.05], 3, 32)?;
    println!("{:>18} {:>8} {:>12} {:>12}", "x", "tau", "4 tau l", "d^2");
    for (row, tau) in field.values.iter().zip(&field.taus) {
        for ((p, x), d2) in row.iter().zip(&field.points).zip(&field.d2) {
            println!("({:>7.4}, {:>7.4}) {:>8.4} {:>12.6} {:>12.6}", x[0], x[1], tau, p.big_l, d2);
        }
    }
    for v in lgeodesic::reduced_volume(&h, y, 0.1, &[0.01], 32, 25.0)? {
        println!("reduced volume at tau {:.3}: {:.8} ({} points, stride {})", v.tau, v.volume, v.points, v.stride);
    }
    Ok(())
}
