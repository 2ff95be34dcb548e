//! The W entropy, its minimization over f, and the kernel and entropy bounds
//! that depend on the minimum.
//!
//! Minimization runs in w = sqrt(u), u = (4 pi tau)^{-n/2} e^{-f}, on the
//! sphere int w^2 dmu = 1. There
//!
//!   W = tau <w, (-4 Lap + S) w> - int w^2 ln w^2 - n - (n/2) ln(4 pi tau)
//!
//! and the Euler-Lagrange residual of f equals F(w)/w - lambda with
//! F(w) = -4 tau Lap w + tau S w - w ln w^2.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::banded::CyclicBanded;
use crate::error::{Error, Result};
use crate::flow::{FlowHistory, FlowState};
use crate::geometry::{CoupledQuantities, ReducedMetric, X1Operator};
use crate::grid::{ModePlan, PeriodicGrid, ScalarField};
use crate::heat::KernelSolution;
use crate::report::{CheckReport, Worst};

/// EL residual is certified where u exceeds this.
pub const DENSITY_FLOOR: f64 = 1e-10;

const SCOUT_ITERS: usize = 60;

/// One (g, phi, tau) instance of the entropy.
pub struct EntropyProblem {
    pub metric: ReducedMetric,
    /// S as a function of x1
    pub s: Vec<f64>,
    pub tau: f64,
    plan: ModePlan,
    op: X1Operator,
    weight: Vec<f64>,
}

impl EntropyProblem {
    pub fn new(metric: &ReducedMetric, s: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::precondition("entropy", format!("tau = {tau} must be positive")));
        }
        if s.len() != metric.grid.n1() {
            return Err(Error::Shape("S profile length differs from n1".into()));
        }
        let cell = metric.grid.cell_volume();
        let weight = metric.sqrt_g().iter().map(|v| v * cell).collect();
        Ok(EntropyProblem {
            metric: metric.clone(),
            s,
            tau,
            plan: ModePlan::new(metric.grid),
            op: metric.x1_operator(),
            weight,
        })
    }

    pub fn from_state(state: &FlowState, alpha: f64, tau: f64) -> Result<Self> {
        let q = CoupledQuantities::new(&state.metric, &state.map, alpha)?;
        Self::new(&state.metric, q.s, tau)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.metric.grid
    }

    fn n(&self) -> f64 {
        self.metric.grid.dim() as f64
    }

    fn log_norm(&self) -> f64 {
        0.5 * self.n() * (4.0 * PI * self.tau).ln()
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.grid().plane();
        a.iter().zip(b).enumerate().map(|(k, (x, y))| x * y * self.weight[k / p]).sum()
    }

    fn lap(&self, w: &[f64]) -> Vec<f64> {
        self.metric.laplacian_with(&self.plan, &self.op, w)
    }

    /// int (4 pi tau)^{-n/2} e^{-f} dmu
    pub fn constraint(&self, f: &ScalarField) -> f64 {
        let u: Vec<f64> = f.data.iter().map(|v| (-v - self.log_norm()).exp()).collect();
        let p = self.grid().plane();
        u.iter().enumerate().map(|(k, v)| v * self.weight[k / p]).sum()
    }

    /// Additive shift onto the constraint surface.
    pub fn project(&self, f: &ScalarField) -> ScalarField {
        let c = self.constraint(f).ln();
        f.map(|v| v + c)
    }

    /// W(g, phi, tau, f); f is projected first if its constraint is off by
    /// more than 1e-6.
    pub fn w_alpha(&self, f: &ScalarField) -> Result<f64> {
        if f.grid != self.grid() {
            return Err(Error::Shape("f and metric grids differ".into()));
        }
        let c = self.constraint(f);
        let f = if (c - 1.0).abs() > 1e-6 { self.project(f) } else { f.clone() };
        let w = self.w_of_f(&f);
        let lw = self.lap(&w);
        let p = self.grid().plane();
        let n = self.n();
        let mut total = 0.0;
        for k in 0..w.len() {
            let u = w[k] * w[k];
            let dens = self.tau * (-4.0 * w[k] * lw[k] + self.s[k / p] * u) + (f.data[k] - n) * u;
            total += dens * self.weight[k / p];
        }
        Ok(total)
    }

    fn w_of_f(&self, f: &ScalarField) -> Vec<f64> {
        f.data.iter().map(|v| (-0.5 * (v + self.log_norm())).exp()).collect()
    }

    fn f_of_w(&self, w: &[f64]) -> ScalarField {
        let data = w.iter().map(|v| -(v * v).max(1e-300).ln() - self.log_norm()).collect();
        ScalarField { grid: self.grid(), data }
    }

    /// tau <w,(-4 Lap + S) w> - int w^2 ln w^2 for normalized w.
    fn energy(&self, w: &[f64]) -> f64 {
        let lw = self.lap(w);
        let p = self.grid().plane();
        let mut e = 0.0;
        for k in 0..w.len() {
            let u = w[k] * w[k];
            e += (self.tau * (-4.0 * w[k] * lw[k] + self.s[k / p] * u) - xlogx(u)) * self.weight[k / p];
        }
        e
    }

    fn nonlinear(&self, w: &[f64]) -> Vec<f64> {
        let lw = self.lap(w);
        let p = self.grid().plane();
        (0..w.len())
            .map(|k| self.tau * (-4.0 * lw[k] + self.s[k / p] * w[k]) - w[k] * ln_sq(w[k]))
            .collect()
    }

    /// sup |F(w)/w - lambda| over points with w^2 > DENSITY_FLOOR.
    fn el_sup(&self, w: &[f64], fw: &[f64], lambda: f64) -> f64 {
        let mut r: f64 = 0.0;
        for k in 0..w.len() {
            if w[k] * w[k] > DENSITY_FLOOR {
                r = r.max((fw[k] / w[k] - lambda).abs());
            }
        }
        r
    }

    /// Sup norm of tau(2 Lap f - |grad f|^2 + S) + f - n - mu on the
    /// certified region, via 2 Lap f - |grad f|^2 = -4 Lap w / w.
    pub fn el_residual(&self, f: &ScalarField, mu: f64) -> f64 {
        let w = self.w_of_f(f);
        let fw = self.nonlinear(&w);
        self.el_sup(&w, &fw, mu + self.n() + self.log_norm())
    }

    /// Factorizations of sigma - 4 tau Lap per transverse mode class.
    fn preconditioner(&self, sigma: f64) -> Result<Preconditioner> {
        let g = self.grid();
        let n1 = g.n1();
        let mut classes: Vec<[f64; 2]> = Vec::new();
        let mut class_of = Vec::with_capacity(g.plane());
        for m in 0..g.plane() {
            let k = self.plan.wavenumbers(m);
            let key = [k[0].abs(), k[1].abs()];
            match classes.iter().position(|c| (c[0] - key[0]).abs() < 1e-9 && (c[1] - key[1]).abs() < 1e-9) {
                Some(i) => class_of.push(i),
                None => {
                    classes.push(key);
                    class_of.push(classes.len() - 1);
                }
            }
        }
        let c = 4.0 * self.tau;
        let facs = classes
            .iter()
            .map(|k| {
                let extra: Vec<f64> = (0..n1)
                    .map(|i| {
                        let mut sym = k[0] * k[0] / self.metric.a[1][i];
                        if g.dim() == 3 {
                            sym += k[1] * k[1] / self.metric.a[2][i];
                        }
                        -c * sym
                    })
                    .collect();
                self.op.factor(sigma, -c, &extra)
            })
            .collect::<Result<_>>()?;
        Ok(Preconditioner { facs, class_of })
    }

    fn apply_preconditioner(&self, pc: &Preconditioner, r: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let (n1, p) = (g.n1(), g.plane());
        let mut modes = self.plan.forward_real(r);
        let mut line = vec![Complex64::new(0.0, 0.0); n1];
        for m in 0..p {
            for i in 0..n1 {
                line[i] = modes[i * p + m];
            }
            pc.facs[pc.class_of[m]].solve(&mut line);
            for i in 0..n1 {
                modes[i * p + m] = line[i];
            }
        }
        self.plan.inverse_real(&modes)
    }

    fn normalize(&self, w: &mut [f64]) {
        let nrm = self.dot(w, w).sqrt();
        w.iter_mut().for_each(|v| *v /= nrm);
    }

    /// Starting points: the constant, and Gaussians of the R^n minimizer
    /// width centered at several x1 positions.
    fn starts(&self) -> Vec<Vec<f64>> {
        let g = self.grid();
        let n1 = g.n1();
        let mut out = vec![vec![1.0; g.len()]];
        let (imin, imax) = argminmax(&self.s);
        let mut centers = vec![imin, imax, 0, n1 / 2];
        centers.dedup();
        let mut seen = Vec::new();
        for c in centers {
            if seen.contains(&c) {
                continue;
            }
            seen.push(c);
            let mut y = [g.coord(0, c), 0.0, 0.0];
            for (ax, yv) in y.iter_mut().enumerate().take(g.dim()).skip(1) {
                *yv = 0.5 * g.length(ax);
            }
            let a: Vec<f64> = (0..g.dim()).map(|ax| self.metric.a[ax][c]).collect();
            let w = (0..g.len())
                .map(|k| {
                    let x = g.point(k);
                    let mut d2 = 0.0;
                    for ax in 0..g.dim() {
                        let l = g.length(ax);
                        let mut d = (x[ax] - y[ax]).rem_euclid(l);
                        if d > 0.5 * l {
                            d -= l;
                        }
                        d2 += a[ax] * d * d;
                    }
                    (-d2 / (8.0 * self.tau)).exp()
                })
                .collect();
            out.push(w);
        }
        out
    }
}

struct Preconditioner {
    facs: Vec<CyclicBanded>,
    class_of: Vec<usize>,
}

fn xlogx(u: f64) -> f64 {
    if u > 0.0 {
        u * u.ln()
    } else {
        0.0
    }
}

fn ln_sq(w: f64) -> f64 {
    (w * w).max(1e-300).ln()
}

fn argminmax(v: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[lo] {
            lo = i;
        }
        if *x > v[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy)]
pub struct MuOptions {
    pub max_iter: usize,
    /// stop once the EL residual is below this
    pub target: f64,
    /// certification threshold
    pub certify: f64,
    /// preconditioner shift
    pub sigma: f64,
}

impl Default for MuOptions {
    fn default() -> Self {
        MuOptions { max_iter: 3000, target: 1e-7, certify: 1e-3, sigma: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct MuResult {
    pub tau: f64,
    pub mu: f64,
    pub f: ScalarField,
    pub el_residual: f64,
    pub iterations: usize,
    /// EL residual below the certification threshold
    pub certified: bool,
}

/// Preconditioned nonlinear conjugate gradients on the unit sphere with a
/// curve search along great circles. One run per starting point; the lowest
/// value wins.
pub fn minimize_mu(problem: &EntropyProblem, opts: MuOptions) -> Result<MuResult> {
    minimize_mu_from(problem, opts, &[])
}

/// As `minimize_mu` with extra starting fields (e.g. a neighbouring tau's f).
pub fn minimize_mu_from(problem: &EntropyProblem, opts: MuOptions, extra: &[ScalarField]) -> Result<MuResult> {
    let pc = problem.preconditioner(opts.sigma)?;
    let mut starts = problem.starts();
    for f in extra {
        if f.grid == problem.grid() {
            starts.push(problem.w_of_f(&problem.project(f)));
        }
    }
    // short runs from every start, then polish the two lowest
    let scout = MuOptions { max_iter: opts.max_iter.min(SCOUT_ITERS), ..opts };
    let mut runs: Vec<(MuResult, Vec<f64>)> = starts.into_iter().map(|w0| descend(problem, &pc, w0, scout)).collect();
    runs.sort_by(|a, b| a.0.mu.total_cmp(&b.0.mu));
    let mut best: Option<MuResult> = None;
    for (r, w) in runs.into_iter().take(2) {
        let r = if r.el_residual < opts.target {
            r
        } else {
            let left = MuOptions { max_iter: opts.max_iter - r.iterations, ..opts };
            let mut p = descend(problem, &pc, w, left).0;
            p.iterations += r.iterations;
            p
        };
        let better = match &best {
            None => true,
            Some(b) => r.mu < b.mu - 1e-12 || (r.mu <= b.mu + 1e-12 && r.el_residual < b.el_residual),
        };
        if better {
            best = Some(r);
        }
    }
    let b = best.ok_or_else(|| Error::numerical("entropy", "no starting point"))?;
    if !b.mu.is_finite() {
        return Err(Error::numerical("entropy", "entropy minimization produced a non-finite value"));
    }
    Ok(b)
}

fn descend(pb: &EntropyProblem, pc: &Preconditioner, mut w: Vec<f64>, opts: MuOptions) -> (MuResult, Vec<f64>) {
    pb.normalize(&mut w);
    let shift = pb.n() + pb.log_norm();
    let mut e = pb.energy(&w);
    let mut dir: Vec<f64> = vec![0.0; w.len()];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (r, Pr)
    let mut theta = 0.05;
    let mut iters = 0;
    let mut el = f64::INFINITY;
    while iters < opts.max_iter {
        let fw = pb.nonlinear(&w);
        let lambda = pb.dot(&fw, &w);
        el = pb.el_sup(&w, &fw, lambda);
        if el < opts.target {
            break;
        }
        let r: Vec<f64> = fw.iter().zip(&w).map(|(a, b)| a - lambda * b).collect();
        let mut z = pb.apply_preconditioner(pc, &r);
        let zw = pb.dot(&z, &w);
        z.iter_mut().zip(&w).for_each(|(a, b)| *a -= zw * b);
        let beta = match &prev {
            Some((r0, z0)) => {
                let num: f64 = pb.dot(&z, &r) - pb.dot(&z, r0);
                let den = pb.dot(z0, r0);
                if den > 0.0 {
                    (num / den).max(0.0)
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        for k in 0..w.len() {
            dir[k] = -z[k] + beta * dir[k];
        }
        let dw = pb.dot(&dir, &w);
        dir.iter_mut().zip(&w).for_each(|(a, b)| *a -= dw * b);
        let mut slope = 2.0 * pb.dot(&r, &dir);
        if !(slope < 0.0) {
            // not a descent direction: restart along the preconditioned gradient
            for k in 0..w.len() {
                dir[k] = -z[k];
            }
            slope = -2.0 * pb.dot(&r, &z);
        }
        prev = Some((r, z));
        let dn = pb.dot(&dir, &dir).sqrt();
        if !(dn > 0.0) || !(slope < 0.0) {
            break;
        }
        let unit: Vec<f64> = dir.iter().map(|v| v / dn).collect();
        let slope = slope / dn;
        // great-circle point and tangent at angle t
        let at = |t: f64| -> (Vec<f64>, Vec<f64>) {
            let (c, s) = (t.cos(), t.sin());
            let x = w.iter().zip(&unit).map(|(a, b)| c * a + s * b).collect();
            let dx = w.iter().zip(&unit).map(|(a, b)| -s * a + c * b).collect();
            (x, dx)
        };
        let slope_at = |t: f64| -> (Vec<f64>, f64) {
            let (x, dx) = at(t);
            let s = 2.0 * pb.dot(&pb.nonlinear(&x), &dx);
            (x, s)
        };
        // secant iterations on the slope: the energy itself is too flat near
        // the minimum to resolve tail errors
        let (mut t0, mut s0) = (0.0, slope);
        let mut t1 = theta;
        let (mut x1, mut s1) = slope_at(t1);
        for _ in 0..8 {
            if s1.abs() <= 0.1 * slope.abs() {
                break;
            }
            let next = if s1 < 0.0 && s1 <= s0 {
                // no curvature seen yet: expand
                t1 * 4.0
            } else {
                let tn = t1 - s1 * (t1 - t0) / (s1 - s0);
                if tn.is_finite() && tn > 0.0 { tn } else { 0.5 * t1 }
            };
            t0 = t1;
            s0 = s1;
            t1 = next.min(1.0);
            let r1 = slope_at(t1);
            x1 = r1.0;
            s1 = r1.1;
        }
        iters += 1;
        let e1 = pb.energy(&x1);
        if !(e1 <= e + 1e-12 * e.abs().max(1.0)) {
            // fall back to backtracking on the energy
            let mut t = t1;
            let mut ok = None;
            for _ in 0..40 {
                t *= 0.5;
                let (x, _) = at(t);
                let et = pb.energy(&x);
                if et <= e {
                    ok = Some((t, x, et));
                    break;
                }
            }
            match ok {
                Some((t, x, et)) => {
                    theta = t;
                    w = x;
                    e = et;
                    pb.normalize(&mut w);
                    continue;
                }
                None => break,
            }
        }
        theta = t1.clamp(1e-10, 0.5);
        w = x1;
        pb.normalize(&mut w);
        e = e1;
    }
    if !el.is_finite() || iters == opts.max_iter {
        let fw = pb.nonlinear(&w);
        el = pb.el_sup(&w, &fw, pb.dot(&fw, &w));
    }
    let mu = e - shift;
    (MuResult { tau: pb.tau, mu, f: pb.f_of_w(&w), el_residual: el, iterations: iters, certified: el < opts.certify }, w)
}

/// `count` log-spaced values from tau_min to tau_max inclusive.
pub fn log_tau_grid(tau_min: f64, tau_max: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![tau_max];
    }
    let (a, b) = (tau_min.ln(), tau_max.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MuPoint {
    pub tau: f64,
    pub mu: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct MuCurve {
    pub points: Vec<MuPoint>,
    pub minimizers: Vec<ScalarField>,
    /// -inf mu over the grid
    pub b: f64,
    /// min(0, inf S(0)), used by the kernel bound
    pub d_bound: f64,
    /// inf S(0), used by the entropy-Sobolev inequality
    pub d_sobolev: f64,
    pub upsilon: f64,
}

impl MuCurve {
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        use crate::report::fmt;
        self.points.iter().map(|p| vec![fmt(p.tau), fmt(p.mu), fmt(p.el_residual), p.iterations.to_string()]).collect()
    }

    pub const CSV_HEADER: [&'static str; 4] = ["tau", "mu", "el_residual", "iterations"];
}

/// mu over a tau grid for one state, warm-starting each tau from its
/// neighbour.
pub fn mu_curve(state: &FlowState, alpha: f64, taus: &[f64], opts: MuOptions) -> Result<MuCurve> {
    let q = CoupledQuantities::new(&state.metric, &state.map, alpha)?;
    let d_sobolev = q.inf_s();
    let mut points = Vec::with_capacity(taus.len());
    let mut minimizers: Vec<ScalarField> = Vec::with_capacity(taus.len());
    for &tau in taus {
        let pb = EntropyProblem::new(&state.metric, q.s.clone(), tau)?;
        let r = minimize_mu_from(&pb, opts, &minimizers[minimizers.len().saturating_sub(1)..])?;
        points.push(MuPoint { tau, mu: r.mu, el_residual: r.el_residual, iterations: r.iterations, certified: r.certified });
        minimizers.push(r.f);
    }
    let upsilon = points.iter().map(|p| p.mu).fold(f64::INFINITY, f64::min);
    Ok(MuCurve { points, minimizers, b: -upsilon, d_bound: d_sobolev.min(0.0), d_sobolev, upsilon })
}

/// Every minimizer's EL residual below `certify`.
pub fn el_certificate(curve: &MuCurve, certify: f64) -> CheckReport {
    let mut w = Worst::default();
    for p in &curve.points {
        w.update(p.el_residual, p.tau);
    }
    CheckReport::new("mu_el_residual", None, w.value, certify).note(format!("worst at tau {:.4e}", w.time.unwrap_or(f64::NAN)))
}

/// mu -> 0 as tau -> 0: |mu| nondecreasing in tau within `tol_mono`, and the
/// linear extrapolation through the four smallest tau within `tol_limit` of 0.
pub fn mu_limit_trend(curve: &MuCurve, tol_mono: f64, tol_limit: f64) -> CheckReport {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.tau, p.mu)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut drop: f64 = 0.0;
    let mut at = None;
    for k in 1..pts.len() {
        let d = pts[k - 1].1.abs() - pts[k].1.abs();
        if d > drop {
            drop = d;
            at = Some(pts[k].0);
        }
    }
    let m = pts.len().min(4);
    let intercept = if m >= 2 {
        let (sx, sy) = pts[..m].iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m as f64, sy / m as f64);
        let (sxy, sxx) = pts[..m].iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
        my - sxy / sxx * mx
    } else {
        pts.first().map(|p| p.1).unwrap_or(f64::NAN)
    };
    CheckReport::new("mu_limit_trend", at, drop, tol_mono)
        .fail_if(!(intercept.abs() <= tol_limit), format!("|extrapolated mu(0)| above {tol_limit:.1e}"))
        .note(format!("extrapolated mu(0) = {intercept:.4e}, smallest tau {:.4e}", pts.first().map(|p| p.0).unwrap_or(f64::NAN)))
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityRow {
    pub t: f64,
    pub tau: f64,
    pub mu: f64,
    pub el_residual: f64,
}

/// mu(g(t), phi(t), tau_terminal + T - t) at `count` snapshots; must be
/// nondecreasing in t. Refuses non-constant coupling.
pub fn mu_monotonicity(
    history: &FlowHistory,
    tau_terminal: f64,
    count: usize,
    tol: f64,
    opts: MuOptions,
) -> Result<(CheckReport, Vec<MonotonicityRow>)> {
    if !history.schedule.is_constant() {
        return Err(Error::precondition("entropy", "mu monotonicity needs a constant coupling alpha"));
    }
    if !(tau_terminal > 0.0) {
        return Err(Error::precondition("entropy", "terminal tau must be positive"));
    }
    let snaps = &history.snapshots;
    let count = count.max(2).min(snaps.len());
    let big_t = history.terminal_time;
    let mut rows = Vec::with_capacity(count);
    let mut warm: Vec<ScalarField> = Vec::new();
    for j in 0..count {
        let idx = j * (snaps.len() - 1) / (count - 1);
        let st = &snaps[idx];
        let tau = tau_terminal + big_t - st.t;
        let pb = EntropyProblem::from_state(st, history.schedule.alpha(st.t), tau)?;
        let r = minimize_mu_from(&pb, opts, &warm)?;
        rows.push(MonotonicityRow { t: st.t, tau, mu: r.mu, el_residual: r.el_residual });
        warm = vec![r.f];
    }
    let mut drop: f64 = 0.0;
    let mut at = None;
    for k in 1..rows.len() {
        let d = rows[k - 1].mu - rows[k].mu;
        if d > drop {
            drop = d;
            at = Some(rows[k].t);
        }
    }
    let worst_el = rows.iter().map(|r| r.el_residual).fold(0.0, f64::max);
    let rep = CheckReport::new("mu_monotonicity", at, drop, tol)
        .fail_if(!(worst_el < opts.certify), format!("uncertified minimizer, EL residual {worst_el:.3e}"))
        .note(format!("{} snapshots, tau_T = {tau_terminal}", rows.len()));
    Ok((rep, rows))
}

/// H(x,t;y,T) <= e^{B - tau D/3} (4 pi tau)^{-n/2} with D = min(0, inf S(0))
/// and B = -inf mu over the curve points with tau <= T (flow started at 0),
/// as max over slices of sup_x H (4 pi tau)^{n/2} e^{-(B - tau D/3)} - 1.
pub fn kernel_upper_bound_check(kernel: &KernelSolution, curve: &MuCurve, tol: f64) -> CheckReport {
    let n = kernel.grid().dim() as f64;
    let window: Vec<f64> = curve.points.iter().filter(|p| p.tau <= kernel.terminal * (1.0 + 1e-12)).map(|p| p.mu).collect();
    if window.is_empty() {
        return CheckReport::refused("kernel_upper_bound", "no mu values with tau <= T");
    }
    let b = -window.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w = Worst::default();
    for i in 0..kernel.slices.len() {
        let tau = kernel.tau(i);
        let bound = (b - tau * curve.d_bound / 3.0).exp();
        let scaled = kernel.slices[i].max() * (4.0 * PI * tau).powf(0.5 * n);
        w.update(scaled / bound - 1.0, kernel.times[i]);
    }
    let seed_exp = b - kernel.tau0 * curve.d_bound / 3.0;
    let mut r = CheckReport::new("kernel_upper_bound", w.time, w.value, tol)
        .fail_if(seed_exp < 0.0, format!("B - tau0 D/3 = {seed_exp:.4e} < 0"))
        .note(format!("B {:.6e} from {} mu values, D_bound {:.6e} (D_sobolev {:.6e})", b, window.len(), curve.d_bound, curve.d_sobolev));
    if curve.d_bound != curve.d_sobolev {
        r = r.note("D_bound = min(0, inf S(0)) differs from D_sobolev = inf S(0)");
    }
    r
}

/// mu(g(0), tau) >= (tau D/3) ln((4 pi)^{n/2} C) with D = inf S(0), per tau.
pub fn entropy_sobolev_inequality(curve: &MuCurve, c_tilde: f64, n: usize, tol: f64) -> CheckReport {
    if n < 3 {
        return CheckReport::refused("entropy_sobolev", "needs dimension at least 3");
    }
    if !(curve.d_sobolev > 0.0) {
        return CheckReport::refused("entropy_sobolev", format!("inf S(0) = {:.4e} is not positive", curve.d_sobolev));
    }
    let lg = 0.5 * n as f64 * (4.0 * PI).ln() + c_tilde.ln();
    let mut w = Worst::default();
    let mut margins = Vec::new();
    for p in &curve.points {
        let rhs = p.tau * curve.d_sobolev / 3.0 * lg;
        w.update(rhs - p.mu, p.tau);
        margins.push(format!("tau {:.4e}: mu {:.5e} rhs {:.5e}", p.tau, p.mu, rhs));
    }
    let mut r = CheckReport::new("entropy_sobolev", w.time, w.value, tol);
    for m in margins {
        r = r.note(m);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, CouplingSchedule, RunOptions};
    use crate::geometry::{FourierProfile, ScalarMap};
    use proptest::prelude::*;

    fn coupled_state(shape: &[usize], scale: f64) -> FlowState {
        let g = PeriodicGrid::new(shape).unwrap();
        let a1 = FourierProfile { mean: 1.0, cos: vec![(1, 0.2)], sin: vec![] };
        let a2 = FourierProfile { mean: 1.0, cos: vec![], sin: vec![(1, 0.3)] };
        let phi = FourierProfile { mean: 0.0, cos: vec![(2, 0.2)], sin: vec![(1, 0.5)] };
        let m = ReducedMetric::from_profiles(g, &[a1, a2]).unwrap().scaled(scale);
        FlowState::new(0.0, m, ScalarMap::from_profile(&g, &phi)).unwrap()
    }

    fn flat(shape: &[usize], tau: f64) -> EntropyProblem {
        let g = PeriodicGrid::new(shape).unwrap();
        EntropyProblem::new(&ReducedMetric::flat(g), vec![0.0; g.n1()], tau).unwrap()
    }

    #[test]
    fn constant_f_closed_form() {
        let pb = flat(&[32, 32], 1.0);
        let v = (2.0 * PI).powi(2);
        let f = ScalarField::constant(pb.grid(), v.ln() - (4.0 * PI).ln());
        assert!((pb.constraint(&f) - 1.0).abs() < 1e-12);
        let w = pb.w_alpha(&f).unwrap();
        assert!((w - (v.ln() - (4.0 * PI).ln() - 2.0)).abs() < 1e-12);
        assert!((w + 0.8552).abs() < 1e-4);
    }

    #[test]
    fn projection_is_exact() {
        let pb = flat(&[32, 16], 0.3);
        let f = ScalarField::from_fn(pb.grid(), |x| 2.0 + x[0].sin() * x[1].cos());
        assert!((pb.constraint(&pb.project(&f)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn refuses_nonpositive_tau() {
        let g = PeriodicGrid::new(&[16, 16]).unwrap();
        assert!(EntropyProblem::new(&ReducedMetric::flat(g), vec![0.0; 16], 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn w_is_scale_invariant(c in prop::sample::select(vec![0.25, 4.0]), amp in 0.0f64..1.5, k in 1i32..3, tau in 0.05f64..1.0) {
            let st = coupled_state(&[32, 16], 1.0);
            let sc = coupled_state(&[32, 16], c);
            let p1 = EntropyProblem::from_state(&st, 2.0, tau).unwrap();
            let p2 = EntropyProblem::from_state(&sc, 2.0, c * tau).unwrap();
            let f = p1.project(&ScalarField::from_fn(st.metric.grid, |x| amp * (k as f64 * x[0]).cos() + 0.3 * x[1].sin()));
            let (w1, w2) = (p1.w_alpha(&f).unwrap(), p2.w_alpha(&f).unwrap());
            prop_assert!((w1 - w2).abs() < 1e-8, "{} vs {}", w1, w2);
        }
    }

    #[test]
    fn flat_small_tau_near_zero() {
        let pb = flat(&[128, 128], 0.01);
        let r = minimize_mu(&pb, MuOptions::default()).unwrap();
        assert!(r.mu <= 0.0 && r.mu >= -0.05, "{}", r.mu);
        assert!(r.certified && r.el_residual < 1e-3);
        assert!((pb.el_residual(&r.f, r.mu) - r.el_residual).abs() < 1e-6);
    }

    #[test]
    fn flat_unit_tau_below_constant_bound() {
        let pb = flat(&[64, 64], 1.0);
        let r = minimize_mu(&pb, MuOptions::default()).unwrap();
        assert!(r.mu <= -0.8552 + 1e-4, "{}", r.mu);
        assert!(r.certified);
    }

    #[test]
    fn coupled_minimum_below_constant_f() {
        let st = coupled_state(&[128, 64], 1.0);
        for tau in [0.05, 0.3] {
            let pb = EntropyProblem::from_state(&st, 2.0, tau).unwrap();
            let r = minimize_mu(&pb, MuOptions::default()).unwrap();
            let fc = pb.project(&ScalarField::constant(pb.grid(), 0.0));
            assert!(r.mu <= pb.w_alpha(&fc).unwrap());
            assert!(r.certified, "{}", r.el_residual);
            assert!((pb.w_alpha(&r.f).unwrap() - r.mu).abs() < 1e-8);
        }
    }

    #[test]
    fn monotonicity_refuses_varying_alpha() {
        let st = coupled_state(&[32, 16], 1.0);
        let sch = CouplingSchedule::linear_clipped(2.0, 1.0, -1.0).unwrap();
        let h = run(&st, &sch, RunOptions { t_final: 0.02, dt: None, snapshot_every: 10 }).unwrap();
        assert!(mu_monotonicity(&h, 0.1, 8, 2e-3, MuOptions::default()).is_err());
    }

    #[test]
    fn static_flat_mu_constant() {
        let g = PeriodicGrid::new(&[128, 128]).unwrap();
        let st = FlowState::new(0.0, ReducedMetric::flat(g), ScalarMap::constant(&g, 0.0)).unwrap();
        let h = run(&st, &CouplingSchedule::constant(1.0), RunOptions { t_final: 0.04, dt: None, snapshot_every: 1 }).unwrap();
        let (rep, rows) = mu_monotonicity(&h, 0.08, 8, 2e-3, MuOptions::default()).unwrap();
        assert!(rep.pass);
        let lo = rows.iter().map(|r| r.mu).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.mu).fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1e-6, "{lo} {hi}");
    }

    #[test]
    fn log_grid_endpoints() {
        let t = log_tau_grid(1e-3, 0.1, 16);
        assert_eq!(t.len(), 16);
        assert!((t[0] - 1e-3).abs() < 1e-15 && (t[15] - 0.1).abs() < 1e-15);
        assert!(t.windows(2).all(|w| (w[1] / w[0] - t[1] / t[0]).abs() < 1e-12));
    }
}
