//! Diagonal metrics on T^n whose coefficients depend on x1 only, a scalar map
//! phi(x1), their curvature and the coupled quantities built from Ric and dphi.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::banded::CyclicBanded;
use crate::error::{Error, Result};
use crate::grid::{d1_periodic, d2_periodic, derivative, ModePlan, PeriodicGrid, ScalarField};

/// Finite Fourier series in x1: mean + sum c_k cos(2 pi k x / L) + sum s_k sin(2 pi k x / L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FourierProfile {
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<(u32, f64)>,
    #[serde(default)]
    pub sin: Vec<(u32, f64)>,
}

impl FourierProfile {
    pub fn constant(mean: f64) -> Self {
        FourierProfile { mean, cos: vec![], sin: vec![] }
    }

    pub fn eval(&self, x: f64, length: f64) -> f64 {
        let w = 2.0 * PI / length;
        let mut v = self.mean;
        for &(k, c) in &self.cos {
            v += c * (w * k as f64 * x).cos();
        }
        for &(k, s) in &self.sin {
            v += s * (w * k as f64 * x).sin();
        }
        v
    }

    pub fn sample(&self, grid: &PeriodicGrid) -> Vec<f64> {
        grid.x1_axis().iter().map(|&x| self.eval(x, grid.length(0))).collect()
    }
}

/// Trigonometric interpolation of a periodic x1 profile.
#[derive(Debug, Clone)]
pub struct ProfileInterp {
    length: f64,
    // real Fourier coefficients: a_0, (a_k, b_k) for k = 1..n/2
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ProfileInterp {
    pub fn new(values: &[f64], length: f64) -> Self {
        let n = values.len();
        let m = n / 2;
        let mut a = vec![0.0; m + 1];
        let mut b = vec![0.0; m + 1];
        for k in 0..=m {
            let (mut sa, mut sb) = (0.0, 0.0);
            for (i, v) in values.iter().enumerate() {
                let th = 2.0 * PI * (k * i) as f64 / n as f64;
                sa += v * th.cos();
                sb += v * th.sin();
            }
            let f = if k == 0 || k == m { 1.0 } else { 2.0 } / n as f64;
            a[k] = sa * f;
            b[k] = if k == m { 0.0 } else { sb * f };
        }
        ProfileInterp { length, a, b }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_deriv(x, 0)
    }

    /// Value (order 0) or derivative of order 1 or 2.
    pub fn eval_deriv(&self, x: f64, order: u32) -> f64 {
        let w = 2.0 * PI / self.length;
        let mut v = if order == 0 { self.a[0] } else { 0.0 };
        for k in 1..self.a.len() {
            let kw = w * k as f64;
            let th = kw * x;
            let (s, c) = th.sin_cos();
            let (ak, bk) = (self.a[k], self.b[k]);
            v += match order {
                0 => ak * c + bk * s,
                1 => kw * (-ak * s + bk * c),
                _ => -kw * kw * (ak * c + bk * s),
            };
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMetric {
    pub grid: PeriodicGrid,
    /// a_i(x1), one profile per axis.
    pub a: Vec<Vec<f64>>,
}

impl ReducedMetric {
    pub fn new(grid: PeriodicGrid, a: Vec<Vec<f64>>) -> Result<Self> {
        if a.len() != grid.dim() {
            return Err(Error::Metric(format!("{} profiles for dimension {}", a.len(), grid.dim())));
        }
        for (i, p) in a.iter().enumerate() {
            if p.len() != grid.n1() {
                return Err(Error::Metric(format!("profile a{} has {} samples, expected {}", i + 1, p.len(), grid.n1())));
            }
            if let Some(v) = p.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::Metric(format!("a{} has non-positive or non-finite value {v}", i + 1)));
            }
        }
        Ok(ReducedMetric { grid, a })
    }

    pub fn flat(grid: PeriodicGrid) -> Self {
        ReducedMetric { grid, a: vec![vec![1.0; grid.n1()]; grid.dim()] }
    }

    pub fn from_profiles(grid: PeriodicGrid, profiles: &[FourierProfile]) -> Result<Self> {
        Self::new(grid, profiles.iter().map(|p| p.sample(&grid)).collect())
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn scaled(&self, c: f64) -> Self {
        ReducedMetric { grid: self.grid, a: self.a.iter().map(|p| p.iter().map(|v| v * c).collect()).collect() }
    }

    pub fn sqrt_g(&self) -> Vec<f64> {
        (0..self.grid.n1()).map(|i| self.a.iter().map(|p| p[i]).product::<f64>().sqrt()).collect()
    }

    pub fn volume_element(&self) -> ScalarField {
        ScalarField::from_x1_profile(self.grid, &self.sqrt_g()).unwrap()
    }

    pub fn volume(&self) -> f64 {
        let g = self.grid;
        self.sqrt_g().iter().sum::<f64>() * g.cell_volume() * g.plane() as f64
    }

    pub fn min_coefficient(&self) -> f64 {
        self.a.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self)
    }

    pub fn interp(&self) -> Vec<ProfileInterp> {
        self.a.iter().map(|p| ProfileInterp::new(p, self.grid.length(0))).collect()
    }

    /// Conservative fourth order operator (1/sqrt g) d1(sqrt g / a1 d1 .) along x1.
    pub fn x1_operator(&self) -> X1Operator {
        let sg = self.sqrt_g();
        let c: Vec<f64> = sg.iter().zip(&self.a[0]).map(|(s, a)| s / a).collect();
        X1Operator::new(c, sg, self.grid.spacing(0))
    }

    /// |df|^2_g for a full field.
    pub fn gradient_sq(&self, f: &ScalarField) -> Result<ScalarField> {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        for axis in 0..g.dim() {
            let d = derivative(f, axis, 1)?;
            let p = g.plane();
            for (k, v) in d.data.iter().enumerate() {
                out.data[k] += v * v / self.a[axis][k / p];
            }
        }
        Ok(out)
    }

    /// Laplace-Beltrami operator: conservative fourth order along x1, exact per
    /// Fourier mode along the symmetry axes.
    pub fn laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        if f.grid != self.grid {
            return Err(Error::Shape("field and metric grids differ".into()));
        }
        let plan = ModePlan::new(self.grid);
        ScalarField::from_vec(self.grid, self.laplacian_with(&plan, &self.x1_operator(), &f.data))
    }

    /// Same as `laplacian` with a cached plan and x1 operator of this metric.
    pub fn laplacian_with(&self, plan: &ModePlan, op: &X1Operator, data: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let mut modes = plan.forward_real(data);
        let (n1, p) = (g.n1(), g.plane());
        let mut re = vec![0.0; n1];
        let mut im = vec![0.0; n1];
        for m in 0..p {
            let k = plan.wavenumbers(m);
            for i in 0..n1 {
                re[i] = modes[i * p + m].re;
                im[i] = modes[i * p + m].im;
            }
            let (ore, oim) = (op.apply(&re), op.apply(&im));
            for i in 0..n1 {
                let mut sym = k[0] * k[0] / self.a[1][i];
                if g.dim() == 3 {
                    sym += k[1] * k[1] / self.a[2][i];
                }
                modes[i * p + m] = Complex64::new(ore[i] - sym * re[i], oim[i] - sym * im[i]);
            }
        }
        plan.inverse_real(&modes)
    }

    /// Laplacian from local fourth order differences (trace of the Hessian).
    pub fn laplacian_local(&self, f: &ScalarField) -> Result<ScalarField> {
        let hs = self.hessian(f)?;
        Ok(hs.trace(self))
    }

    pub fn hessian(&self, f: &ScalarField) -> Result<Hessian> {
        Hessian::new(self, f)
    }

    /// sum T_ij^2 / (a_i a_j) for a symmetric tensor given by components.
    pub fn tensor_norm_sq(&self, t: &SymTensor) -> ScalarField {
        let g = self.grid;
        let n = g.dim();
        let p = g.plane();
        let mut out = vec![0.0; g.len()];
        for k in 0..g.len() {
            let i1 = k / p;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = t.get(i, j, k);
                    s += v * v / (self.a[i][i1] * self.a[j][i1]);
                }
            }
            out[k] = s;
        }
        ScalarField { grid: g, data: out }
    }

    /// Squared length of the coordinate displacement dx under the metric at
    /// the midpoint in x1, minimized over lattice images.
    pub fn seed_distance_sq(&self, y: [f64; 3]) -> ScalarField {
        let g = self.grid;
        let interp = self.interp();
        let l1 = g.length(0);
        let n1 = g.n1();
        // per (row, image) midpoint coefficients
        let mut coef = vec![[[0.0f64; 3]; 3]; n1];
        let mut dx1 = vec![[0.0f64; 3]; n1];
        for i in 0..n1 {
            let x = g.coord(0, i);
            let base = wrap_delta(x - y[0], l1);
            for (s, shift) in [-1.0, 0.0, 1.0].iter().enumerate() {
                let d = base + shift * l1;
                let mid = y[0] + 0.5 * d;
                dx1[i][s] = d;
                for a in 0..g.dim() {
                    coef[i][s][a] = interp[a].eval(mid);
                }
            }
        }
        ScalarField::from_fn(g, |x| {
            let i = ((x[0] / g.spacing(0)).round() as usize) % n1;
            let mut best = f64::INFINITY;
            for s in 0..3 {
                let mut d2 = coef[i][s][0] * dx1[i][s] * dx1[i][s];
                for a in 1..g.dim() {
                    let d = wrap_delta(x[a] - y[a], g.length(a));
                    d2 += coef[i][s][a] * d * d;
                }
                best = best.min(d2);
            }
            best
        })
    }

    /// Fast marching solution of |grad u|_g = 1 with u(y) = 0; first order
    /// upwind, nodes next to the source initialized from the local metric.
    pub fn geodesic_distance(&self, y: [f64; 3]) -> ScalarField {
        fast_marching(self, y)
    }
}

fn wrap_delta(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

/// Conservative fourth order staggered second-order operator along x1:
/// (1/w) D(c D f) with c interpolated to half points.
#[derive(Debug, Clone)]
pub struct X1Operator {
    h: f64,
    w: Vec<f64>,
    c_half: Vec<f64>,
}

impl X1Operator {
    pub fn new(c: Vec<f64>, w: Vec<f64>, h: f64) -> Self {
        let n = c.len();
        let c_half = (0..n)
            .map(|i| (-c[(i + n - 1) % n] + 9.0 * c[i] + 9.0 * c[(i + 1) % n] - c[(i + 2) % n]) / 16.0)
            .collect();
        X1Operator { h, w, c_half }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        let q = 1.0 / (24.0 * self.h);
        let flux: Vec<f64> = (0..n)
            .map(|j| {
                let g = (f[(j + n - 1) % n] - 27.0 * f[j] + 27.0 * f[(j + 1) % n] - f[(j + 2) % n]) * q;
                self.c_half[j] * g
            })
            .collect();
        (0..n)
            .map(|i| {
                let d = 27.0 * (flux[i] - flux[(i + n - 1) % n]) - (flux[(i + 1) % n] - flux[(i + n - 2) % n]);
                d * q / self.w[i]
            })
            .collect()
    }

    /// Matrix entry L[i][i+off] for off in -3..=3.
    pub fn entry(&self, i: usize, off: isize) -> f64 {
        let n = self.w.len() as isize;
        let q = 1.0 / (24.0 * self.h);
        // divergence weights on half points j+1/2 for j = i-2..=i+1
        let div = [(-2isize, 1.0), (-1, -27.0), (0, 27.0), (1, -1.0)];
        // gradient weights at half point j+1/2 on nodes j-1..=j+2
        let grad = [(-1isize, 1.0), (0, -27.0), (1, 27.0), (2, -1.0)];
        let mut s = 0.0;
        for &(dj, wd) in &div {
            let j = i as isize + dj;
            for &(dk, wg) in &grad {
                if dj + dk == off {
                    s += wd * wg * self.c_half[j.rem_euclid(n) as usize];
                }
            }
        }
        s * q * q / self.w[i]
    }

    /// Factor alpha*I + beta*L - diag(extra) as a cyclic band matrix.
    pub fn factor(&self, alpha: f64, beta: f64, extra: &[f64]) -> Result<CyclicBanded> {
        CyclicBanded::new(self.w.len(), 3, |i, o| {
            let mut v = beta * self.entry(i, o);
            if o == 0 {
                v += alpha - extra[i];
            }
            v
        })
    }
}

/// Symmetric tensor field stored by upper-triangular components.
#[derive(Debug, Clone)]
pub struct SymTensor {
    pub dim: usize,
    pub comps: Vec<ScalarField>,
}

impl SymTensor {
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if dim == 2 {
            [[0, 1], [1, 2]][i][j]
        } else {
            [[0, 1, 2], [1, 3, 4], [2, 4, 5]][i][j]
        }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        let n = grid.dim();
        SymTensor { dim: n, comps: vec![ScalarField::zeros(grid); n * (n + 1) / 2] }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.comps[Self::slot(self.dim, i, j)].data[k]
    }

    pub fn comp(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[Self::slot(self.dim, i, j)]
    }

    pub fn comp_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.comps[Self::slot(self.dim, i, j)]
    }
}

#[derive(Debug, Clone)]
pub struct Hessian {
    pub t: SymTensor,
}

impl Hessian {
    fn new(m: &ReducedMetric, f: &ScalarField) -> Result<Self> {
        let g = m.grid;
        let n = g.dim();
        let c = m.curvature();
        let p = g.plane();
        let d1: Vec<ScalarField> = (0..n).map(|a| derivative(f, a, 1)).collect::<Result<_>>()?;
        let mut t = SymTensor::zeros(g);
        for i in 0..n {
            for j in i..n {
                let raw = if i == j { derivative(f, i, 2)? } else { derivative(&d1[i], j, 1)? };
                let out = t.comp_mut(i, j);
                for k in 0..g.len() {
                    let i1 = k / p;
                    let v = raw.data[k];
                    out.data[k] = match (i, j) {
                        (0, 0) => v - c.kappa[i1] * d1[0].data[k],
                        (0, jj) => v - c.psi_p[jj - 1][i1] * d1[jj].data[k],
                        (ii, jj) if ii == jj => {
                            v + m.a[ii][i1] * c.psi_p[ii - 1][i1] / m.a[0][i1] * d1[0].data[k]
                        }
                        _ => v,
                    };
                }
            }
        }
        Ok(Hessian { t })
    }

    pub fn trace(&self, m: &ReducedMetric) -> ScalarField {
        let g = m.grid;
        let p = g.plane();
        let mut out = ScalarField::zeros(g);
        for i in 0..g.dim() {
            let c = self.t.comp(i, i);
            for k in 0..g.len() {
                out.data[k] += c.data[k] / m.a[i][k / p];
            }
        }
        out
    }
}

/// Curvature of a reduced metric, all as x1 profiles.
#[derive(Debug, Clone)]
pub struct Curvature {
    /// Gamma^1_11 = a1' / 2a1.
    pub kappa: Vec<f64>,
    /// psi_j' and psi_j'' with psi_j = ln(a_j)/2, j = 2..n.
    pub psi_p: Vec<Vec<f64>>,
    pub psi_pp: Vec<Vec<f64>>,
    /// Ricci diagonal R_ii.
    pub ric: Vec<Vec<f64>>,
    pub r: Vec<f64>,
}

impl Curvature {
    fn new(m: &ReducedMetric) -> Self {
        let h = m.grid.spacing(0);
        let n = m.dim();
        let n1 = m.grid.n1();
        let a1 = &m.a[0];
        let a1p = d1_periodic(a1, h);
        let kappa: Vec<f64> = (0..n1).map(|i| a1p[i] / (2.0 * a1[i])).collect();
        let mut psi_p = Vec::new();
        let mut psi_pp = Vec::new();
        for j in 1..n {
            let aj = &m.a[j];
            let ap = d1_periodic(aj, h);
            let app = d2_periodic(aj, h);
            psi_p.push((0..n1).map(|i| ap[i] / (2.0 * aj[i])).collect::<Vec<_>>());
            psi_pp.push((0..n1).map(|i| app[i] / (2.0 * aj[i]) - ap[i] * ap[i] / (2.0 * aj[i] * aj[i])).collect::<Vec<_>>());
        }
        let mut ric = vec![vec![0.0; n1]; n];
        let mut r = vec![0.0; n1];
        for i in 0..n1 {
            let sum_p: f64 = psi_p.iter().map(|p| p[i]).sum();
            let mut r11 = 0.0;
            for j in 0..n - 1 {
                let (pp, ppp) = (psi_p[j][i], psi_pp[j][i]);
                r11 -= ppp + pp * pp - kappa[i] * pp;
                ric[j + 1][i] = -(m.a[j + 1][i] / a1[i]) * (ppp + pp * (sum_p - kappa[i]));
            }
            ric[0][i] = r11;
            r[i] = (0..n).map(|k| ric[k][i] / m.a[k][i]).sum();
        }
        Curvature { kappa, psi_p, psi_pp, ric, r }
    }

    /// sum psi_j' (the transverse part of (ln sqrt g)').
    pub fn sigma_t(&self, i: usize) -> f64 {
        self.psi_p.iter().map(|p| p[i]).sum()
    }

    /// sup |R_ii / a_i|.
    pub fn ric_scale(&self, m: &ReducedMetric) -> f64 {
        let mut s: f64 = 0.0;
        for (k, r) in self.ric.iter().enumerate() {
            for (i, v) in r.iter().enumerate() {
                s = s.max((v / m.a[k][i]).abs());
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub phi: Vec<f64>,
}

impl ScalarMap {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric("map has non-finite values".into()));
        }
        Ok(ScalarMap { phi })
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        ScalarMap { phi: vec![c; grid.n1()] }
    }

    pub fn from_profile(grid: &PeriodicGrid, p: &FourierProfile) -> Self {
        ScalarMap { phi: p.sample(grid) }
    }
}

#[derive(Debug, Clone)]
pub struct CoupledQuantities {
    pub alpha: f64,
    /// phi' along x1
    pub dphi: Vec<f64>,
    /// |grad phi|^2
    pub energy: Vec<f64>,
    /// tension field (Laplacian of phi)
    pub tension: Vec<f64>,
    /// S = R - alpha |grad phi|^2
    pub s: Vec<f64>,
    /// diagonal of S_ij = R_ij - alpha d_i phi d_j phi
    pub s_ij: Vec<Vec<f64>>,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// max(0, sup S_ii / a_i), the upper eigenvalue bound of S_ij
    pub k_upper: f64,
    pub curvature: Curvature,
}

impl CoupledQuantities {
    pub fn new(m: &ReducedMetric, map: &ScalarMap, alpha: f64) -> Result<Self> {
        if alpha < 0.0 {
            return Err(Error::precondition("geometry", "alpha must be nonnegative"));
        }
        if map.phi.len() != m.grid.n1() {
            return Err(Error::Shape("map and metric sample counts differ".into()));
        }
        let h = m.grid.spacing(0);
        let n1 = m.grid.n1();
        let n = m.dim();
        let c = m.curvature();
        let dphi = d1_periodic(&map.phi, h);
        let ddphi = d2_periodic(&map.phi, h);
        let a1 = &m.a[0];
        let energy: Vec<f64> = (0..n1).map(|i| dphi[i] * dphi[i] / a1[i]).collect();
        let tension: Vec<f64> = (0..n1)
            .map(|i| (ddphi[i] + dphi[i] * (c.sigma_t(i) - c.kappa[i])) / a1[i])
            .collect();
        let s: Vec<f64> = (0..n1).map(|i| c.r[i] - alpha * energy[i]).collect();
        let mut s_ij = c.ric.clone();
        for i in 0..n1 {
            s_ij[0][i] -= alpha * dphi[i] * dphi[i];
        }
        let mut k1: f64 = 0.0;
        let mut k2: f64 = 0.0;
        let mut k_upper: f64 = 0.0;
        for k in 0..n {
            for i in 0..n1 {
                k1 = k1.max(-c.ric[k][i] / m.a[k][i]);
                k2 = k2.max(-s_ij[k][i] / m.a[k][i]);
                k_upper = k_upper.max(s_ij[k][i] / m.a[k][i]);
            }
        }
        let sp = d1_periodic(&s, h);
        let k3 = (0..n1).map(|i| sp[i] * sp[i] / a1[i]).fold(0.0, f64::max);
        let k4 = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok(CoupledQuantities { alpha, dphi, energy, tension, s, s_ij, k1, k2, k3, k4, k_upper, curvature: c })
    }

    /// sum_ij S_ij^2 / (a_i a_j), diagonal tensor.
    pub fn s_ij_norm_sq(&self, m: &ReducedMetric) -> Vec<f64> {
        (0..m.grid.n1())
            .map(|i| (0..m.dim()).map(|k| (self.s_ij[k][i] / m.a[k][i]).powi(2)).sum())
            .collect()
    }

    pub fn inf_s(&self) -> f64 {
        self.s.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Result of the generalized contracted Bianchi identity check.
#[derive(Debug, Clone)]
pub struct BianchiResult {
    pub residual: f64,
    /// D(S, X) = 2 alpha |tension - X(phi)|^2 - alpha' |grad phi|^2
    pub d: Vec<f64>,
}

/// First component of div S_ij (the only nonzero one in this class).
pub fn divergence_s(m: &ReducedMetric, q: &CoupledQuantities) -> Vec<f64> {
    let h = m.grid.spacing(0);
    let s11p = d1_periodic(&q.s_ij[0], h);
    let c = &q.curvature;
    (0..m.grid.n1())
        .map(|i| {
            let a1 = m.a[0][i];
            let mut v = (s11p[i] - 2.0 * c.kappa[i] * q.s_ij[0][i]) / a1;
            for j in 1..m.dim() {
                v += c.psi_p[j - 1][i] * (q.s_ij[0][i] / a1 - q.s_ij[j][i] / m.a[j][i]);
            }
            v
        })
        .collect()
}

/// 4 (div S)(X) - 2 dS(X) against -4 alpha tension dphi(X) for X = x1comp d_1.
pub fn bianchi_residual(
    m: &ReducedMetric,
    map: &ScalarMap,
    alpha: f64,
    alpha_prime: f64,
    x1comp: &[f64],
) -> Result<BianchiResult> {
    let q = CoupledQuantities::new(m, map, alpha)?;
    let h = m.grid.spacing(0);
    let div = divergence_s(m, &q);
    let sp = d1_periodic(&q.s, h);
    let mut residual: f64 = 0.0;
    let mut d = Vec::with_capacity(m.grid.n1());
    for i in 0..m.grid.n1() {
        let x = x1comp[i];
        let lhs = 4.0 * div[i] * x - 2.0 * sp[i] * x;
        let rhs = -4.0 * alpha * q.tension[i] * q.dphi[i] * x;
        residual = residual.max((lhs - rhs).abs());
        let e = q.tension[i] - x * q.dphi[i];
        d.push(2.0 * alpha * e * e - alpha_prime * q.energy[i]);
    }
    Ok(BianchiResult { residual, d })
}

#[derive(Copy, Clone, PartialEq)]
struct Node(f64, usize);

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then(other.1.cmp(&self.1))
    }
}

fn fast_marching(m: &ReducedMetric, y: [f64; 3]) -> ScalarField {
    let g = m.grid;
    let n = g.dim();
    let len = g.len();
    let mut u = vec![f64::INFINITY; len];
    let mut frozen = vec![false; len];
    let mut heap = BinaryHeap::new();
    let interp = m.interp();

    // nodes within two cells of y along every axis get the local quadratic form
    let mut near = vec![Vec::new(); n];
    for a in 0..n {
        let h = g.spacing(a);
        let c = (wrap_delta(y[a], g.length(a)).rem_euclid(g.length(a)) / h).round() as i64;
        for o in -2..=2i64 {
            near[a].push((c + o).rem_euclid(g.n(a) as i64) as usize);
        }
    }
    let mut idx = [0usize; 3];
    let counts = [near[0].len(), near[1].len(), if n == 3 { near[2].len() } else { 1 }];
    for i0 in 0..counts[0] {
        for i1 in 0..counts[1] {
            for i2 in 0..counts[2] {
                idx[0] = near[0][i0];
                idx[1] = near[1][i1];
                idx[2] = if n == 3 { near[2][i2] } else { 0 };
                let k = g.index(&idx[..n]);
                let x = g.point(k);
                let d1 = wrap_delta(x[0] - y[0], g.length(0));
                let mid = y[0] + 0.5 * d1;
                let mut d2 = interp[0].eval(mid) * d1 * d1;
                for a in 1..n {
                    let d = wrap_delta(x[a] - y[a], g.length(a));
                    d2 += interp[a].eval(mid) * d * d;
                }
                u[k] = d2.sqrt();
                heap.push(Node(u[k], k));
            }
        }
    }

    let h: Vec<f64> = (0..n).map(|a| g.spacing(a)).collect();
    while let Some(Node(d, k)) = heap.pop() {
        if frozen[k] || d > u[k] {
            continue;
        }
        frozen[k] = true;
        let idx = g.unravel(k);
        for a in 0..n {
            for s in [-1i64, 1] {
                let mut j = idx;
                j[a] = (idx[a] as i64 + s).rem_euclid(g.n(a) as i64) as usize;
                let kk = g.index(&j[..n]);
                if frozen[kk] {
                    continue;
                }
                let cand = eikonal_update(&u, &frozen, g, &j, &h, |ax| m.a[ax][j[0]]);
                if cand < u[kk] {
                    u[kk] = cand;
                    heap.push(Node(cand, kk));
                }
            }
        }
    }
    ScalarField { grid: g, data: u }
}

fn eikonal_update(
    u: &[f64],
    frozen: &[bool],
    g: PeriodicGrid,
    idx: &[usize; 3],
    h: &[f64],
    coef: impl Fn(usize) -> f64,
) -> f64 {
    let n = g.dim();
    // (neighbour value, weight h^2 a)
    let mut cands: Vec<(f64, f64)> = Vec::with_capacity(n);
    for a in 0..n {
        let mut best = f64::INFINITY;
        for s in [-1i64, 1] {
            let mut j = *idx;
            j[a] = (idx[a] as i64 + s).rem_euclid(g.n(a) as i64) as usize;
            let kk = g.index(&j[..n]);
            if frozen[kk] {
                best = best.min(u[kk]);
            }
        }
        if best.is_finite() {
            cands.push((best, h[a] * h[a] * coef(a)));
        }
    }
    cands.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut out = f64::INFINITY;
    for m in 1..=cands.len() {
        // sum (u - u_a)^2 / w_a = 1
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
        for &(ua, wa) in &cands[..m] {
            qa += 1.0 / wa;
            qb -= 2.0 * ua / wa;
            qc += ua * ua / wa;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            break;
        }
        let val = (-qb + disc.sqrt()) / (2.0 * qa);
        if m == cands.len() || val <= cands[m].0 {
            out = val;
            break;
        }
        out = val;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn flat_is_flat() {
        let g = PeriodicGrid::new(&[32, 16, 16]).unwrap();
        let m = ReducedMetric::flat(g);
        let c = m.curvature();
        assert!(c.r.iter().all(|v| v.abs() < 1e-10));
        assert!(c.kappa.iter().all(|v| v.abs() < 1e-10));
        assert!(c.ric.iter().flatten().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn conformal_curvature() {
        let err = |n1: usize| {
            let g = PeriodicGrid::new(&[n1, 16]).unwrap();
            let x = g.x1_axis();
            let u: Vec<f64> = x.iter().map(|x| 0.1 * x.sin()).collect();
            let a: Vec<f64> = u.iter().map(|u| (2.0 * u).exp()).collect();
            let m = ReducedMetric::new(g, vec![a.clone(), a]).unwrap();
            let r = m.curvature().r;
            let exact: Vec<f64> = x.iter().zip(&u).map(|(x, u)| -2.0 * (-2.0 * u).exp() * (-0.1 * x.sin())).collect();
            sup(&r, &exact)
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e1 < 1e-4 && e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn coupled_flat_map() {
        let g = PeriodicGrid::new(&[128, 16]).unwrap();
        let m = ReducedMetric::flat(g);
        let map = ScalarMap::from_profile(&g, &FourierProfile { mean: 0.0, cos: vec![], sin: vec![(1, 0.2)] });
        let q = CoupledQuantities::new(&m, &map, 1.0).unwrap();
        let exact: Vec<f64> = g.x1_axis().iter().map(|x| -(0.2 * x.cos()).powi(2)).collect();
        assert!(sup(&q.s, &exact) < 1e-6);
        let q0 = CoupledQuantities::new(&m, &map, 0.0).unwrap();
        assert_eq!(q0.s_ij, q0.curvature.ric);
    }

    #[test]
    fn laplacian_examples() {
        let g = PeriodicGrid::new(&[64, 32]).unwrap();
        let m = ReducedMetric::flat(g);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let l = m.laplacian(&f).unwrap();
        assert!(sup(&l.data, &f.map(|v| -v).data) < 1e-5);
        let c = ScalarField::constant(g, 2.0);
        assert!(m.laplacian(&c).unwrap().data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn x1_operator_matches_entries() {
        let g = PeriodicGrid::new(&[32, 16]).unwrap();
        let a1: Vec<f64> = g.x1_axis().iter().map(|x| 1.0 + 0.2 * x.cos()).collect();
        let a2: Vec<f64> = g.x1_axis().iter().map(|x| 1.0 + 0.3 * x.sin()).collect();
        let m = ReducedMetric::new(g, vec![a1, a2]).unwrap();
        let op = m.x1_operator();
        let f: Vec<f64> = g.x1_axis().iter().map(|x| (2.0 * x).sin() + x.cos()).collect();
        let direct = op.apply(&f);
        let via = CyclicBanded::apply_reference(32, 3, |i, o| op.entry(i, o), &f);
        assert!(sup(&direct, &via) < 1e-12);
    }

    #[test]
    fn geodesic_flat() {
        let g = PeriodicGrid::new(&[64, 64]).unwrap();
        let m = ReducedMetric::flat(g);
        let d = m.geodesic_distance([0.0; 3]);
        let h = g.spacing(0);
        let exact = ScalarField::from_fn(g, |x| {
            let a = x[0].min(2.0 * PI - x[0]);
            let b = x[1].min(2.0 * PI - x[1]);
            (a * a + b * b).sqrt()
        });
        assert_eq!(d.data[0], 0.0);
        assert!(sup(&d.data, &exact.data) < 2.0 * h, "{}", sup(&d.data, &exact.data));
    }

    #[test]
    fn geodesic_conformal_axis() {
        let g = PeriodicGrid::new(&[128, 64]).unwrap();
        let a: Vec<f64> = g.x1_axis().iter().map(|x| (0.2 * x.sin()).exp()).collect();
        let m = ReducedMetric::new(g, vec![a.clone(), a.clone()]).unwrap();
        let d = m.geodesic_distance([0.0; 3]);
        // along x1 up to half the circle the axis is a geodesic
        let h = g.spacing(0);
        let mut q = 0.0;
        for i in 1..=32 {
            let xm = (i as f64 - 0.5) * h;
            q += (0.2 * xm.sin()).exp().sqrt() * h;
            let v = d.data[g.index(&[i, 0])];
            assert!((v - q).abs() <= 0.02 * q, "i={i} fmm {v} quad {q}");
        }
    }
}
