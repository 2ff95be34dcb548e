//! Periodic structured grids on T^n, fourth order differences, quadrature and
//! Fourier transforms along the symmetry axes (every axis except x1).

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    dim: usize,
    n: [usize; 3],
    len: [f64; 3],
}

impl PeriodicGrid {
    pub fn new(shape: &[usize]) -> Result<Self> {
        let lengths = vec![2.0 * PI; shape.len()];
        Self::with_lengths(shape, &lengths)
    }

    pub fn with_lengths(shape: &[usize], lengths: &[f64]) -> Result<Self> {
        let dim = shape.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::Grid(format!("dimension {dim} not in {{2,3}}")));
        }
        if lengths.len() != dim {
            return Err(Error::Grid("one length per axis required".into()));
        }
        let mut n = [1usize; 3];
        let mut len = [1.0f64; 3];
        for a in 0..dim {
            if shape[a] < 16 || shape[a] % 2 != 0 {
                return Err(Error::Grid(format!("axis {a}: N = {} must be even and >= 16", shape[a])));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(Error::Grid(format!("axis {a}: length must be positive")));
            }
            n[a] = shape[a];
            len[a] = lengths[a];
        }
        Ok(PeriodicGrid { dim, n, len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.len[..self.dim]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.len[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.len[axis] / self.n[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points per x1 line.
    pub fn n1(&self) -> usize {
        self.n[0]
    }

    /// Number of points sharing one x1 value.
    pub fn plane(&self) -> usize {
        self.n[1] * self.n[2]
    }

    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.n[1] * self.n[2],
            1 => self.n[2],
            _ => 1,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.spacing(axis)
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        let mut k = 0;
        for a in 0..3 {
            let i = if a < idx.len() { idx[a] } else { 0 };
            k = k * self.n[a] + i;
        }
        k
    }

    pub fn unravel(&self, k: usize) -> [usize; 3] {
        let i3 = k % self.n[2];
        let i2 = (k / self.n[2]) % self.n[1];
        let i1 = k / (self.n[1] * self.n[2]);
        [i1, i2, i3]
    }

    pub fn point(&self, k: usize) -> [f64; 3] {
        let idx = self.unravel(k);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coord(a, idx[a]);
        }
        x
    }

    pub fn x1_axis(&self) -> Vec<f64> {
        (0..self.n[0]).map(|i| self.coord(0, i)).collect()
    }

    /// Grid with every axis scaled by `factor` in point count.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let shape: Vec<usize> = self
            .shape()
            .iter()
            .map(|&m| {
                let s = (m as f64 * factor / 2.0).round() as usize * 2;
                s.max(16)
            })
            .collect();
        Self::with_lengths(&shape, self.lengths())
    }

    /// Integer wavenumber of FFT bin `m` along an axis.
    pub fn wavenumber(&self, axis: usize, m: usize) -> f64 {
        let n = self.n[axis] as i64;
        let m = m as i64;
        let k = if m <= n / 2 { m } else { m - n };
        2.0 * PI * k as f64 / self.len[axis]
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            Err(Error::Axis { axis, dim: self.dim })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PeriodicGrid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        ScalarField { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        ScalarField { grid, data: vec![c; grid.len()] }
    }

    pub fn from_vec(grid: PeriodicGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for a grid of {}", data.len(), grid.len())));
        }
        Ok(ScalarField { grid, data })
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        ScalarField { grid, data }
    }

    /// Broadcast a profile sampled on the x1 axis.
    pub fn from_x1_profile(grid: PeriodicGrid, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.n1() {
            return Err(Error::Shape("profile length differs from N1".into()));
        }
        let p = grid.plane();
        let mut data = Vec::with_capacity(grid.len());
        for &v in profile {
            data.extend(std::iter::repeat(v).take(p));
        }
        Ok(ScalarField { grid, data })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = k;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        ScalarField {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Periodic tensor-product cubic Lagrange interpolation at a point.
    pub fn sample(&self, x: [f64; 3]) -> f64 {
        let g = &self.grid;
        let n = g.dim();
        let mut base = [0i64; 3];
        let mut w = [[0.0f64; 4]; 3];
        for a in 0..n {
            let u = x[a] / g.spacing(a);
            let i0 = u.floor();
            let f = u - i0;
            base[a] = i0 as i64 - 1;
            // nodes at -1, 0, 1, 2 relative to i0
            w[a] = [
                -f * (f - 1.0) * (f - 2.0) / 6.0,
                (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
                -(f + 1.0) * f * (f - 2.0) / 2.0,
                (f + 1.0) * f * (f - 1.0) / 6.0,
            ];
        }
        if n == 2 {
            w[2] = [1.0, 0.0, 0.0, 0.0];
        }
        let m3 = if n == 3 { 4 } else { 1 };
        let mut s = 0.0;
        for p in 0..4 {
            for q in 0..4 {
                for r in 0..m3 {
                    let mut idx = [0usize; 3];
                    for (a, o) in [p, q, r].iter().enumerate().take(n) {
                        idx[a] = (base[a] + *o as i64).rem_euclid(g.n(a) as i64) as usize;
                    }
                    s += w[0][p] * w[1][q] * w[2][r] * self.data[g.index(&idx[..n])];
                }
            }
        }
        s
    }

    /// Values along x1 at fixed transverse indices.
    pub fn x1_line(&self, i2: usize, i3: usize) -> Vec<f64> {
        let g = &self.grid;
        (0..g.n1()).map(|i| self.data[g.index(&[i, i2, i3])]).collect()
    }
}

/// Fourth order periodic first difference of a line.
pub fn d1_periodic(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let c = 1.0 / (12.0 * h);
    (0..n)
        .map(|i| {
            let m2 = f[(i + n - 2) % n];
            let m1 = f[(i + n - 1) % n];
            let p1 = f[(i + 1) % n];
            let p2 = f[(i + 2) % n];
            ((m2 - p2) + 8.0 * (p1 - m1)) * c
        })
        .collect()
}

/// Fourth order periodic second difference of a line.
pub fn d2_periodic(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let c = 1.0 / (12.0 * h * h);
    (0..n)
        .map(|i| {
            let m2 = f[(i + n - 2) % n];
            let m1 = f[(i + n - 1) % n];
            let p1 = f[(i + 1) % n];
            let p2 = f[(i + 2) % n];
            (16.0 * (m1 + p1) - (m2 + p2) - 30.0 * f[i]) * c
        })
        .collect()
}

pub fn derivative(field: &ScalarField, axis: usize, order: usize) -> Result<ScalarField> {
    let g = field.grid;
    g.check_axis(axis)?;
    if !(order == 1 || order == 2) {
        return Err(Error::Grid(format!("derivative order {order} not in {{1,2}}")));
    }
    let n = g.n(axis);
    let s = g.stride(axis);
    let h = g.spacing(axis);
    let mut out = vec![0.0; g.len()];
    let f = &field.data;
    for k in 0..g.len() {
        let i = (k / s) % n;
        let base = k - i * s;
        let at = |j: usize| f[base + ((i + n + j - 2) % n) * s];
        let (m2, m1, c0, p1, p2) = (at(0), at(1), at(2), at(3), at(4));
        out[k] = if order == 1 {
            ((m2 - p2) + 8.0 * (p1 - m1)) / (12.0 * h)
        } else {
            (16.0 * (m1 + p1) - (m2 + p2) - 30.0 * c0) / (12.0 * h * h)
        };
    }
    Ok(ScalarField { grid: g, data: out })
}

pub fn integrate(field: &ScalarField, volume_element: &ScalarField) -> Result<f64> {
    if field.grid != volume_element.grid {
        return Err(Error::Shape("field and volume element live on different grids".into()));
    }
    let s: f64 = field.data.iter().zip(&volume_element.data).map(|(a, b)| a * b).sum();
    Ok(s * field.grid.cell_volume())
}

/// Integral with a volume element that depends on x1 only.
pub fn integrate_x1_weight(field: &ScalarField, weight: &[f64]) -> f64 {
    let g = field.grid;
    let p = g.plane();
    let mut s = 0.0;
    for (i, w) in weight.iter().enumerate() {
        let row: f64 = field.data[i * p..(i + 1) * p].iter().sum();
        s += row * w;
    }
    s * g.cell_volume()
}

/// FFT plans over the transverse axes (x2, and x3 in three dimensions).
///
/// Mode data keeps the grid layout; bin (i1, m2, m3) replaces (i1, i2, i3).
/// The forward transform carries the 1/N normalization.
#[derive(Clone)]
pub struct ModePlan {
    grid: PeriodicGrid,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl ModePlan {
    pub fn new(grid: PeriodicGrid) -> Self {
        let mut planner = FftPlanner::new();
        let mut fwd = Vec::new();
        let mut inv = Vec::new();
        for a in 1..grid.dim() {
            fwd.push(planner.plan_fft_forward(grid.n(a)));
            inv.push(planner.plan_fft_inverse(grid.n(a)));
        }
        ModePlan { grid, fwd, inv }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn mode_count(&self) -> usize {
        self.grid.plane()
    }

    pub fn wavenumbers(&self, m: usize) -> [f64; 2] {
        let g = &self.grid;
        if g.dim() == 2 {
            [g.wavenumber(1, m), 0.0]
        } else {
            [g.wavenumber(1, m / g.n(2)), g.wavenumber(2, m % g.n(2))]
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
        let norm = 1.0 / self.grid.plane() as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse_real(&self, data: &[Complex64]) -> Vec<f64> {
        let mut c = data.to_vec();
        self.inverse(&mut c);
        c.iter().map(|z| z.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let g = self.grid;
        let plans = if forward { &self.fwd } else { &self.inv };
        let (n2, n3) = (g.n(1), g.n(2));
        let p = g.plane();
        for row in data.chunks_mut(p) {
            if g.dim() == 2 {
                plans[0].process(row);
            } else {
                for line in row.chunks_mut(n3) {
                    plans[1].process(line);
                }
                let mut col = vec![Complex64::new(0.0, 0.0); n2];
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        col[i2] = row[i2 * n3 + i3];
                    }
                    plans[0].process(&mut col);
                    for i2 in 0..n2 {
                        row[i2 * n3 + i3] = col[i2];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeStack {
    pub grid: PeriodicGrid,
    pub axes: Vec<usize>,
    pub modes: Vec<Complex64>,
}

impl ModeStack {
    pub fn inverse(&self) -> ScalarField {
        let plan = ModePlan::new(self.grid);
        ScalarField { grid: self.grid, data: plan.inverse_real(&self.modes) }
    }
}

/// Discrete Fourier decomposition along the symmetry axes. Axis 0 (x1) carries
/// the metric dependence and cannot be requested.
pub fn mode_transform(field: &ScalarField, symmetry_axes: &[usize]) -> Result<ModeStack> {
    let g = field.grid;
    for &a in symmetry_axes {
        if a == 0 {
            return Err(Error::Grid("x1 is not a symmetry axis".into()));
        }
        g.check_axis(a)?;
    }
    let expected: Vec<usize> = (1..g.dim()).collect();
    let mut axes = symmetry_axes.to_vec();
    axes.sort_unstable();
    axes.dedup();
    if axes != expected {
        return Err(Error::Grid(format!("symmetry axes must be {expected:?}")));
    }
    let plan = ModePlan::new(g);
    Ok(ModeStack { grid: g, axes, modes: plan.forward_real(&field.data) })
}

/// Header line of the raw dump format.
pub fn dump_header(grid: &PeriodicGrid) -> String {
    let mut s = format!("RHFLOW {}", grid.dim());
    for &n in grid.shape() {
        s.push_str(&format!(" {n}"));
    }
    for &l in grid.lengths() {
        s.push_str(&format!(" {l:.17e}"));
    }
    s
}

pub fn write_field_dump(path: &Path, field: &ScalarField) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", dump_header(&field.grid))?;
    for v in &field.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_field_dump(path: &Path) -> Result<ScalarField> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad = || Error::Shape(format!("bad dump header: {}", header.trim()));
    if parts.first() != Some(&"RHFLOW") {
        return Err(bad());
    }
    let dim: usize = parts.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if parts.len() != 2 + 2 * dim {
        return Err(bad());
    }
    let shape: Vec<usize> = parts[2..2 + dim].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let lengths: Vec<f64> = parts[2 + dim..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let grid = PeriodicGrid::with_lengths(&shape, &lengths)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Shape(format!("dump holds {} bytes, expected {}", bytes.len(), 8 * grid.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ScalarField::from_vec(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn derivative_of_sine() {
        let g = PeriodicGrid::new(&[64, 16]).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let d = derivative(&f, 0, 1).unwrap();
        let exact = ScalarField::from_fn(g, |x| x[0].cos());
        assert!(sup(&d.data, &exact.data) < 1e-5);
        let c = ScalarField::constant(g, 3.7);
        assert!(derivative(&c, 1, 2).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fourth_order_refinement() {
        let err = |n: usize| {
            let g = PeriodicGrid::new(&[n, 16]).unwrap();
            let f = ScalarField::from_fn(g, |x| (2.0 * x[0]).sin());
            let d = derivative(&f, 0, 2).unwrap();
            let exact = ScalarField::from_fn(g, |x| -4.0 * (2.0 * x[0]).sin());
            sup(&d.data, &exact.data)
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn axis_out_of_range() {
        let g = PeriodicGrid::new(&[16, 16]).unwrap();
        let f = ScalarField::zeros(g);
        assert!(matches!(derivative(&f, 2, 1), Err(Error::Axis { .. })));
    }

    #[test]
    fn quadrature() {
        let g = PeriodicGrid::new(&[64, 32]).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let v = integrate(&one, &one).unwrap();
        assert!((v - (2.0 * PI).powi(2)).abs() < 1e-10);
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        assert!(integrate(&s, &one).unwrap().abs() < 1e-12);
        let s2 = ScalarField::from_fn(g, |x| x[0].sin().powi(2));
        assert!((integrate(&s2, &one).unwrap() - (2.0 * PI).powi(2) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn delta_column_spectrum() {
        let g = PeriodicGrid::new(&[16, 32]).unwrap();
        let f = ScalarField::from_fn(g, |x| if (x[1] - g.coord(1, 5)).abs() < 1e-12 { 1.0 } else { 0.0 });
        let m = mode_transform(&f, &[1]).unwrap();
        for z in &m.modes {
            assert!((z.norm() - 1.0 / 32.0).abs() < 1e-14);
        }
        let ind = ScalarField::from_fn(g, |x| x[0].cos());
        let m = mode_transform(&ind, &[1]).unwrap();
        for (k, z) in m.modes.iter().enumerate() {
            if k % 32 != 0 {
                assert!(z.norm() < 1e-14);
            }
        }
        assert!(mode_transform(&ind, &[0]).is_err());
    }

    #[test]
    fn roundtrip_and_parseval_3d() {
        let g = PeriodicGrid::new(&[16, 16, 32]).unwrap();
        let f = ScalarField::from_fn(g, |x| (x[0] + 2.0 * x[1]).sin() * (3.0 * x[2]).cos() + 0.1 * x[1]);
        let m = mode_transform(&f, &[1, 2]).unwrap();
        assert!(sup(&m.inverse().data, &f.data) < 1e-12);
        let e_phys: f64 = f.data.iter().map(|v| v * v).sum();
        let e_mode: f64 = m.modes.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.plane() as f64;
        assert!((e_phys - e_mode).abs() < 1e-10 * e_phys);
    }

    #[test]
    fn dump_roundtrip() {
        let g = PeriodicGrid::with_lengths(&[16, 18], &[1.0, 2.0]).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] * 3.0 - x[1]);
        let dir = std::env::temp_dir().join(format!("rhflow_dump_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("f.bin");
        write_field_dump(&p, &f).unwrap();
        let back = read_field_dump(&p).unwrap();
        assert_eq!(back, f);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn grid_validation() {
        assert!(PeriodicGrid::new(&[15, 16]).is_err());
        assert!(PeriodicGrid::new(&[8, 16]).is_err());
        assert!(PeriodicGrid::new(&[16]).is_err());
    }
}
