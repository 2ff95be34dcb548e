//! Sharp Euclidean Sobolev constants and the kernel bound constant they give.

use rhflow::sobolev;

fn main() -> rhflow::Result<()> {
    println!("{:>3} {:>14} {:>14} {:>14}", "n", "K(n,2)", "C_n", "C~_n");
    for n in 3..=8 {
        println!("{n:>3} {:>14.10} {:>14.10} {:>14.10}", sobolev::talenti_constant(n)?, sobolev::c_n(n), sobolev::c_tilde(n)?);
    }
    // the Euclidean kernel sup (4 pi tau)^{-3/2} sits below C~_3 tau^{-3/2}
    println!("(4 pi)^(-3/2) = {:.5}", (4.0 * std::f64::consts::PI).powf(-1.5));
    Ok(())
}
