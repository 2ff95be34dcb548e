//! Cyclic banded linear systems: band LU without pivoting plus a Woodbury
//! correction for the periodic corner blocks.

use std::ops::{Mul, SubAssign};

use crate::error::{Error, Result};

pub trait Value: Copy + Default + SubAssign + Mul<f64, Output = Self> {}
impl<T: Copy + Default + SubAssign + Mul<f64, Output = T>> Value for T {}

#[derive(Debug, Clone)]
pub struct CyclicBanded {
    n: usize,
    b: usize,
    // band LU of the non-wrapping part, row i holds columns i-b..=i+b
    lu: Vec<f64>,
    // B^{-1} U, column-major (2b columns)
    z: Vec<f64>,
    // rows carrying wrap entries and those entries (column, value)
    wrap_rows: Vec<usize>,
    wrap: Vec<Vec<(usize, f64)>>,
    // LU of the capacitance matrix I + V^T Z with its pivots
    cap: Vec<f64>,
    piv: Vec<usize>,
}

impl CyclicBanded {
    /// `entry(i, off)` is M[i][(i + off) mod n] for off in -b..=b.
    pub fn new(n: usize, b: usize, entry: impl Fn(usize, isize) -> f64) -> Result<Self> {
        if n < 4 * b + 2 {
            return Err(Error::numerical("banded", format!("n = {n} too small for bandwidth {b}")));
        }
        let w = 2 * b + 1;
        let mut lu = vec![0.0; n * w];
        let mut wrap_rows = Vec::new();
        let mut wrap = Vec::new();
        for i in 0..n {
            let mut row_wrap = Vec::new();
            for o in -(b as isize)..=(b as isize) {
                let j = i as isize + o;
                let v = entry(i, o);
                if j >= 0 && (j as usize) < n {
                    lu[i * w + (o + b as isize) as usize] = v;
                } else if v != 0.0 {
                    row_wrap.push((j.rem_euclid(n as isize) as usize, v));
                }
            }
            if i < b || i >= n - b {
                wrap_rows.push(i);
                wrap.push(row_wrap);
            }
        }
        // band LU
        for k in 0..n {
            let p = lu[k * w + b];
            if p.abs() < 1e-300 || !p.is_finite() {
                return Err(Error::numerical("banded", format!("zero pivot at row {k}")));
            }
            for i in k + 1..(k + b + 1).min(n) {
                let l = lu[i * w + (k + b - i)] / p;
                lu[i * w + (k + b - i)] = l;
                for j in k + 1..(k + b + 1).min(n) {
                    lu[i * w + (j + b - i)] -= l * lu[k * w + (j + b - k)];
                }
            }
        }
        let r = wrap_rows.len();
        let mut out = CyclicBanded { n, b, lu, z: vec![0.0; n * r], wrap_rows, wrap, cap: vec![0.0; r * r], piv: vec![0; r] };
        for c in 0..r {
            let mut col = vec![0.0; n];
            col[out.wrap_rows[c]] = 1.0;
            out.band_solve(&mut col);
            out.z[c * n..(c + 1) * n].copy_from_slice(&col);
        }
        // capacitance I + V^T Z, V^T row c = wrap entries of row wrap_rows[c]
        for c in 0..r {
            for d in 0..r {
                let mut s = if c == d { 1.0 } else { 0.0 };
                for &(j, v) in &out.wrap[c] {
                    s += v * out.z[d * n + j];
                }
                out.cap[c * r + d] = s;
            }
        }
        out.factor_cap()?;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn factor_cap(&mut self) -> Result<()> {
        let r = self.wrap_rows.len();
        let a = &mut self.cap;
        for k in 0..r {
            let mut p = k;
            for i in k + 1..r {
                if a[i * r + k].abs() > a[p * r + k].abs() {
                    p = i;
                }
            }
            if a[p * r + k].abs() < 1e-300 {
                return Err(Error::numerical("banded", "singular capacitance matrix"));
            }
            self.piv[k] = p;
            if p != k {
                for j in 0..r {
                    a.swap(k * r + j, p * r + j);
                }
            }
            for i in k + 1..r {
                let l = a[i * r + k] / a[k * r + k];
                a[i * r + k] = l;
                for j in k + 1..r {
                    a[i * r + j] -= l * a[k * r + j];
                }
            }
        }
        Ok(())
    }

    fn band_solve<T: Value>(&self, x: &mut [T]) {
        let (n, b) = (self.n, self.b);
        let w = 2 * b + 1;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(b)..i {
                s -= x[k] * self.lu[i * w + (k + b - i)];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..(i + b + 1).min(n) {
                s -= x[j] * self.lu[i * w + (j + b - i)];
            }
            x[i] = s * (1.0 / self.lu[i * w + b]);
        }
    }

    pub fn solve<T: Value>(&self, x: &mut [T]) {
        let n = self.n;
        let r = self.wrap_rows.len();
        self.band_solve(x);
        // t = C^{-1} V^T y
        let mut t = vec![T::default(); r];
        for c in 0..r {
            let mut s = T::default();
            for &(j, v) in &self.wrap[c] {
                s -= x[j] * (-v);
            }
            t[c] = s;
        }
        for k in 0..r {
            let p = self.piv[k];
            t.swap(k, p);
        }
        for i in 0..r {
            for k in 0..i {
                let tk = t[k];
                t[i] -= tk * self.cap[i * r + k];
            }
        }
        for i in (0..r).rev() {
            for j in i + 1..r {
                let tj = t[j];
                t[i] -= tj * self.cap[i * r + j];
            }
            t[i] = t[i] * (1.0 / self.cap[i * r + i]);
        }
        for c in 0..r {
            let tc = t[c];
            for i in 0..n {
                x[i] -= tc * self.z[c * n + i];
            }
        }
    }

    /// y = M x, for residual checks.
    pub fn apply_reference(n: usize, b: usize, entry: impl Fn(usize, isize) -> f64, x: &[f64]) -> Vec<f64> {
        (0..n)
            .map(|i| {
                (-(b as isize)..=(b as isize))
                    .map(|o| entry(i, o) * x[(i as isize + o).rem_euclid(n as isize) as usize])
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;

    fn entry(i: usize, o: isize) -> f64 {
        let s = (i as f64 * 0.37).sin();
        match o {
            0 => 4.0 + s,
            1 => -1.0 + 0.1 * s,
            -1 => -1.2,
            2 | -2 => 0.25,
            3 => -0.05,
            -3 => 0.02 * s,
            _ => 0.0,
        }
    }

    #[test]
    fn solves_cyclic_heptadiagonal() {
        let n = 40;
        let m = CyclicBanded::new(n, 3, entry).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).cos() + 0.3).collect();
        let mut y = CyclicBanded::apply_reference(n, 3, entry, &x);
        m.solve(&mut y);
        for i in 0..n {
            assert!((y[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_rhs() {
        let n = 32;
        let m = CyclicBanded::new(n, 3, entry).unwrap();
        let xr: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let xi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).cos()).collect();
        let yr = CyclicBanded::apply_reference(n, 3, entry, &xr);
        let yi = CyclicBanded::apply_reference(n, 3, entry, &xi);
        let mut y: Vec<Complex64> = yr.iter().zip(&yi).map(|(&a, &b)| Complex64::new(a, b)).collect();
        m.solve(&mut y);
        for i in 0..n {
            assert!((y[i].re - xr[i]).abs() < 1e-12 && (y[i].im - xi[i]).abs() < 1e-12);
        }
    }
}
