//! Harnack quantity v along a conjugate kernel and the checks built on it.

use crate::error::{Error, Result};
use crate::flow::FlowHistory;
use crate::geometry::{CoupledQuantities, ReducedMetric, SymTensor};
use crate::grid::{integrate_x1_weight, PeriodicGrid, ScalarField};
use crate::heat::{interp_slice, ForwardSolution, KernelSolution};
use crate::report::{CheckReport, Worst};

/// Cells cleared around masked points before first derivatives of h are used.
pub const STENCIL: usize = 2;

#[derive(Debug, Clone)]
pub struct HarnackField {
    pub index: usize,
    pub t: f64,
    pub tau: f64,
    pub h: ScalarField,
    /// v, zero on invalid points
    pub v: ScalarField,
    /// v / H, NaN on invalid points
    pub ratio: ScalarField,
    pub valid: Vec<bool>,
    pub masked_fraction: f64,
}

impl HarnackField {
    pub fn max_ratio(&self) -> f64 {
        self.ratio.data.iter().filter(|v| v.is_finite()).cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// sup |v|/H over points where H >= frac * max H.
    pub fn max_abs_ratio_near(&self, kernel: &KernelSolution, frac: f64) -> f64 {
        let s = &kernel.slices[self.index];
        let thr = frac * s.max();
        let mut w: f64 = 0.0;
        for (k, r) in self.ratio.data.iter().enumerate() {
            if s.data[k] >= thr && r.is_finite() {
                w = w.max(r.abs());
            }
        }
        w
    }
}

/// Grow a mask (true = excluded) by r cells along every axis.
pub fn dilate(grid: &PeriodicGrid, mask: &[bool], r: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for a in 0..grid.dim() {
        let n = grid.n(a);
        let s = grid.stride(a);
        let mut next = cur.clone();
        for k in 0..grid.len() {
            if !cur[k] {
                continue;
            }
            let i = (k / s) % n;
            let base = k - i * s;
            for o in 1..=r {
                next[base + ((i + o) % n) * s] = true;
                next[base + ((i + n - o % n) % n) * s] = true;
            }
        }
        cur = next;
    }
    cur
}

/// Slices far enough from the seed for the Harnack checks.
pub fn harnack_slices(kernel: &KernelSolution) -> Vec<usize> {
    (0..kernel.times.len()).filter(|&i| kernel.tau(i) >= 2.0 * kernel.tau0 * (1.0 - 1e-9)).collect()
}

fn excluded(kernel: &KernelSolution, i: usize, r: usize) -> Vec<bool> {
    dilate(&kernel.grid(), &kernel.mask(i), r)
}

/// v = (tau (2 Lap h - |grad h|^2 + S) + h - n) H at slice i.
pub fn compute_v(kernel: &KernelSolution, history: &FlowHistory, i: usize) -> Result<HarnackField> {
    let tau = kernel.tau(i);
    if tau < 2.0 * kernel.tau0 * (1.0 - 1e-9) {
        return Err(Error::precondition("harnack", format!("slice tau = {tau:.4e} below 2 tau0")));
    }
    let t = kernel.times[i];
    let (st, q) = history.quantities_at(t)?;
    let grid = kernel.grid();
    let hf = kernel.h_field(i);
    let lap = st.metric.laplacian_local(&hf)?;
    let grad = st.metric.gradient_sq(&hf)?;
    let bad = excluded(kernel, i, STENCIL);
    if bad.iter().all(|&b| b) {
        return Err(Error::numerical("harnack", format!("slice t = {t} fully masked")));
    }
    let n = grid.dim() as f64;
    let p = grid.plane();
    let hs = &kernel.slices[i];
    let mut v = ScalarField::zeros(grid);
    let mut ratio = ScalarField::constant(grid, f64::NAN);
    for k in 0..grid.len() {
        if bad[k] {
            continue;
        }
        let r = tau * (2.0 * lap.data[k] - grad.data[k] + q.s[k / p]) + hf.data[k] - n;
        ratio.data[k] = r;
        v.data[k] = r * hs.data[k];
    }
    Ok(HarnackField {
        index: i,
        t,
        tau,
        h: hf,
        v,
        ratio,
        valid: bad.iter().map(|b| !b).collect(),
        masked_fraction: kernel.masked_fraction(i),
    })
}

pub fn compute_all(kernel: &KernelSolution, history: &FlowHistory) -> Result<Vec<HarnackField>> {
    harnack_slices(kernel).into_iter().map(|i| compute_v(kernel, history, i)).collect()
}

/// max over unmasked points and admissible slices of v/H, against `tol`.
pub fn harnack_sign_check(fields: &[HarnackField], tol: f64) -> CheckReport {
    let mut w = Worst::default();
    let mut masked: f64 = 0.0;
    for f in fields {
        w.update(f.max_ratio(), f.t);
        masked = masked.max(f.masked_fraction);
    }
    CheckReport::new("harnack_v_nonpositive", w.time, w.value, tol)
        .note(format!("{} slices, max masked fraction {masked:.3}", fields.len()))
}

/// Pointwise evaluation of both sides of the evolution identity of v.
#[derive(Debug, Clone)]
pub struct BoxStarResult {
    /// sup |box* v - rhs| / max H
    pub residual: f64,
    /// same with the literal cross term alpha (<dphi, dh>^2 + |tau phi|^2)
    pub literal_residual: f64,
    /// sup rhs / max H (the sign check)
    pub max_rhs: f64,
    pub worst_time: Option<f64>,
    /// grid node and H / max H of the worst residual
    pub worst_node: usize,
    pub worst_level: f64,
    pub slices: usize,
    /// (t, sup |box* v - rhs| / max H) per slice
    pub series: Vec<(f64, f64)>,
}

fn rhs_terms(
    m: &ReducedMetric,
    q: &CoupledQuantities,
    alpha_prime: f64,
    hf: &ScalarField,
    tau: f64,
) -> Result<(ScalarField, ScalarField)> {
    let grid = m.grid;
    let n = grid.dim();
    let p = grid.plane();
    let hess = m.hessian(hf)?;
    let mut t = SymTensor::zeros(grid);
    for i in 0..n {
        for j in i..n {
            let src = hess.t.comp(i, j);
            let dst = t.comp_mut(i, j);
            for k in 0..grid.len() {
                let i1 = k / p;
                let mut v = src.data[k];
                if i == j {
                    v += q.s_ij[i][i1] - m.a[i][i1] / (2.0 * tau);
                }
                dst.data[k] = v;
            }
        }
    }
    let norm = m.tensor_norm_sq(&t);
    let d1 = crate::grid::derivative(hf, 0, 1)?;
    let mut corrected = ScalarField::zeros(grid);
    let mut literal = ScalarField::zeros(grid);
    for k in 0..grid.len() {
        let i1 = k / p;
        let cross = q.dphi[i1] * d1.data[k] / m.a[0][i1];
        let tp = q.tension[i1];
        let tail = -0.5 * alpha_prime * q.energy[i1];
        corrected.data[k] = -2.0 * tau * (norm.data[k] + q.alpha * (tp - cross).powi(2) + tail);
        literal.data[k] = -2.0 * tau * (norm.data[k] + q.alpha * (cross * cross + tp * tp) + tail);
    }
    Ok((corrected, literal))
}

/// box* v = dv/dtau - Lap v + S v against -2 tau (|S + Hess h - g/2tau|^2
/// + alpha (tau_g phi - <dphi, dh>)^2 - alpha'/2 |dphi|^2) H.
/// Where the identity residual is measured. The window has to stay fixed in
/// tau across resolutions: right after the seed the residual is dominated by
/// the seed's own error, which only shrinks relative to the step.
#[derive(Debug, Clone, Copy)]
pub struct BoxStarOptions {
    /// skip points with H below this fraction of max H (cut locus, tails)
    pub min_level: f64,
    /// skip slices with tau below this fraction of the solved tau range
    pub min_tau_fraction: f64,
}

impl Default for BoxStarOptions {
    fn default() -> Self {
        Self { min_level: 1e-2, min_tau_fraction: 0.25 }
    }
}

pub fn boxstar_v(
    kernel: &KernelSolution,
    history: &FlowHistory,
    fields: &[HarnackField],
    opts: BoxStarOptions,
) -> Result<BoxStarResult> {
    let tau_span = kernel.terminal - kernel.times.last().copied().unwrap_or(kernel.terminal);
    let min_level = opts.min_level;
    if fields.len() < 3 {
        return Err(Error::precondition("harnack", "box* v needs at least three slices"));
    }
    let grid = kernel.grid();
    let p = grid.plane();
    let mut res = Worst::default();
    let mut lit: f64 = 0.0;
    let mut max_rhs = f64::NEG_INFINITY;
    let mut count = 0;
    let (mut node, mut level) = (0, f64::NAN);
    let mut series = Vec::new();
    for w in fields.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        if a.index + 1 != b.index || b.index + 1 != c.index {
            continue;
        }
        let (ta, tb, tc) = (a.tau, b.tau, c.tau);
        if tb < opts.min_tau_fraction * tau_span {
            continue;
        }
        let (ha, hc) = (tb - ta, tc - tb);
        // three-point derivative on an uneven grid
        let (wa, wb, wc) = (-hc / (ha * (ha + hc)), (hc - ha) / (ha * hc), ha / (hc * (ha + hc)));
        let (st, q) = history.quantities_at(b.t)?;
        let m = &st.metric;
        let lap_v = m.laplacian_local(&b.v)?;
        let ap = history.schedule.alpha_prime(b.t);
        let (rhs_c, rhs_l) = rhs_terms(m, &q, ap, &b.h, tb)?;
        let hs = &kernel.slices[b.index];
        let hmax = hs.max();
        let mut bad = excluded(kernel, b.index, 2 * STENCIL);
        for f in [a, c] {
            for (k, v) in f.valid.iter().enumerate() {
                if !v {
                    bad[k] = true;
                }
            }
        }
        let mut local: f64 = 0.0;
        for k in 0..grid.len() {
            if bad[k] || hs.data[k] < min_level * hmax {
                continue;
            }
            let dv = wa * a.v.data[k] + wb * b.v.data[k] + wc * c.v.data[k];
            let lhs = dv - lap_v.data[k] + q.s[k / p] * b.v.data[k];
            let rc = rhs_c.data[k] * hs.data[k];
            let rl = rhs_l.data[k] * hs.data[k];
            let e = (lhs - rc).abs() / hmax;
            if e > local {
                local = e;
                if e > res.value {
                    node = k;
                    level = hs.data[k] / hmax;
                }
            }
            lit = lit.max((lhs - rl).abs() / hmax);
            max_rhs = max_rhs.max(rc / hmax);
        }
        res.update(local, b.t);
        series.push((b.t, local));
        count += 1;
    }
    if count == 0 {
        return Err(Error::precondition("harnack", "no three consecutive admissible slices"));
    }
    Ok(BoxStarResult { residual: res.value, literal_residual: lit, max_rhs, worst_time: res.time, worst_node: node, worst_level: level, slices: count, series })
}

/// Both inequality forms of the differential Harnack estimate along a curve.
#[derive(Debug, Clone)]
pub struct LyhResult {
    pub name: String,
    /// max of lhs - rhs for -dh/dt <= (S + |gamma'|^2)/2 - h/2tau
    pub first: f64,
    /// max of lhs - rhs for d(2 sqrt(tau) h)/dtau <= sqrt(tau)(S + |gamma'|^2)
    pub second: f64,
    pub worst_time: Option<f64>,
    /// rows (t, tau, lhs1, rhs1, lhs2, rhs2)
    pub rows: Vec<[f64; 6]>,
}

/// `curve(tau)` gives gamma in unwrapped coordinates.
pub fn lyh_along_curve(
    kernel: &KernelSolution,
    history: &FlowHistory,
    name: &str,
    curve: &dyn Fn(f64) -> [f64; 3],
) -> Result<LyhResult> {
    let idx = harnack_slices(kernel);
    let grid = kernel.grid();
    let n = grid.dim();
    let h_at = |i: usize| -> Result<f64> {
        let x = curve(kernel.tau(i));
        let hv = kernel.slices[i].sample(x);
        if !(hv > crate::heat::MASK_THRESHOLD * kernel.slices[i].max()) {
            return Err(Error::precondition("harnack", format!("curve {name} enters the masked region at t = {}", kernel.times[i])));
        }
        Ok(kernel.h_field(i).sample(x))
    };
    let mut out = LyhResult { name: name.into(), first: f64::NEG_INFINITY, second: f64::NEG_INFINITY, worst_time: None, rows: vec![] };
    let mut w = Worst::default();
    for &i in &idx {
        if i == 0 || i + 1 >= kernel.times.len() || !idx.contains(&(i - 1)) {
            continue;
        }
        let (ta, tb, tc) = (kernel.tau(i - 1), kernel.tau(i), kernel.tau(i + 1));
        let (ha, hc) = (tb - ta, tc - tb);
        let (wa, wb, wc) = (-hc / (ha * (ha + hc)), (hc - ha) / (ha * hc), ha / (hc * (ha + hc)));
        let (h0, h1, h2) = (h_at(i - 1)?, h_at(i)?, h_at(i + 1)?);
        let dh = wa * h0 + wb * h1 + wc * h2;
        let (g0, g1, g2) = (curve(ta), curve(tb), curve(tc));
        let (st, q) = history.quantities_at(kernel.times[i])?;
        let interp = st.metric.interp();
        let s_interp = crate::geometry::ProfileInterp::new(&q.s, grid.length(0));
        let mut speed = 0.0;
        for a in 0..n {
            let d = wa * g0[a] + wb * g1[a] + wc * g2[a];
            speed += interp[a].eval(g1[0]) * d * d;
        }
        let sv = s_interp.eval(g1[0]);
        let lhs1 = dh;
        let rhs1 = 0.5 * (sv + speed) - h1 / (2.0 * tb);
        let rt = tb.sqrt();
        let lhs2 = h1 / rt + 2.0 * rt * dh;
        let rhs2 = rt * (sv + speed);
        out.first = out.first.max(lhs1 - rhs1);
        out.second = out.second.max(lhs2 - rhs2);
        w.update((lhs1 - rhs1).max(lhs2 - rhs2), kernel.times[i]);
        out.rows.push([kernel.times[i], tb, lhs1, rhs1, lhs2, rhs2]);
    }
    if out.rows.is_empty() {
        return Err(Error::precondition("harnack", "no admissible slices along the curve"));
    }
    out.worst_time = w.time;
    Ok(out)
}

pub fn lyh_report(r: &LyhResult, tol: f64) -> CheckReport {
    CheckReport::new(format!("lyh_{}", r.name), r.worst_time, r.first.max(r.second), tol)
        .note(format!("first form {:.4e}, second form {:.4e}", r.first, r.second))
}

/// Barrier form of the gradient estimate for q = H:
/// a |grad q|^2 / q <= b q ln(A/q) + c q.
///
/// The estimate needs q bounded on its whole window, so the slice at
/// `tau_start` plays the role of terminal data: tau' = tau - tau_start and
/// A = a_factor * sup q over slices with tau >= tau_start.
pub fn gradient_estimate_check(
    kernel: &KernelSolution,
    history: &FlowHistory,
    tau_start: f64,
    a_factor: f64,
    tol: f64,
) -> Result<CheckReport> {
    let kb = history.curvature_bounds()?;
    let grid = kernel.grid();
    let n = grid.dim() as f64;
    let mut notes = vec![];
    let mut k2 = kb.k2;
    if k2 < 1e-8 {
        k2 = 1e-8;
        notes.push(format!("k2 = {:.3e} raised to 1e-8", kb.k2));
    }
    let k5 = 1.0 + kb.k3 / (n * k2);
    let start = kernel.nearest(kernel.terminal - tau_start.max(kernel.tau0));
    let tau_s = kernel.tau(start);
    let window: Vec<usize> = harnack_slices(kernel).into_iter().filter(|&i| i >= start).collect();
    if window.is_empty() {
        return Err(Error::precondition("harnack", "no slices after the gradient-estimate start"));
    }
    let sup = window.iter().map(|&i| kernel.slices[i].max()).fold(0.0, f64::max);
    let big_a = a_factor * sup;
    let tmax = (kernel.terminal - tau_s).min(1.0);
    let mut w = Worst::default();
    for i in window {
        let tau = kernel.tau(i) - tau_s;
        if tau > tmax {
            continue;
        }
        let a = tau / (1.0 + (2.0 * kb.k1 + (2.0 + n) * k2 + 1.0) * tau);
        let b = (kb.k4 * tau).exp();
        let c = ((k5 * kb.k4 * tau).exp() * n * k2 + kb.k3) * tau;
        let st = history.state_at(kernel.times[i])?;
        let hf = kernel.h_field(i);
        let grad = st.metric.gradient_sq(&hf)?;
        let bad = excluded(kernel, i, STENCIL);
        let qs = &kernel.slices[i];
        let mut local = f64::NEG_INFINITY;
        for k in 0..grid.len() {
            if bad[k] {
                continue;
            }
            let q = qs.data[k];
            local = local.max(a * grad.data[k] - b * (big_a / q).ln() - c);
        }
        w.update(local, kernel.times[i]);
    }
    let mut r = CheckReport::new("gradient_estimate", w.time, w.value, tol);
    for s in notes {
        r = r.note(s);
    }
    Ok(r.note(format!(
        "k1 {:.4e} k2 {:.4e} k3 {:.4e} k4 {:.4e} A {big_a:.4e} tau_start {tau_s:.4e}",
        kb.k1, kb.k2, kb.k3, kb.k4
    )))
}

#[derive(Debug, Clone)]
pub struct RhoSeries {
    /// increasing t
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    /// int (h - n/2) H Phi dmu
    pub h_weighted: Vec<f64>,
    pub terminal: f64,
}

impl RhoSeries {
    /// Limit of rho as t -> T: quadratic least squares in tau over the
    /// slices with tau <= 3 tau_last. The series stops at 2 tau0, so the
    /// last value alone is off by O(tau0).
    pub fn terminal_estimate(&self) -> f64 {
        let k = self.rho.len();
        if k < 3 {
            return self.rho.last().copied().unwrap_or(f64::NAN);
        }
        let tau_last = self.terminal - self.times[k - 1];
        let pts: Vec<(f64, f64)> = (0..k)
            .map(|j| (self.terminal - self.times[j], self.rho[j]))
            .filter(|p| p.0 <= 3.0 * tau_last)
            .collect();
        if pts.len() < 3 {
            return self.rho[k - 1];
        }
        quadratic_intercept(&pts)
    }
}

fn quadratic_intercept(pts: &[(f64, f64)]) -> f64 {
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for &(x, y) in pts {
        let p = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += p[i] * p[j];
            }
            r[i] += p[i] * y;
        }
    }
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let mut m0 = m;
    for i in 0..3 {
        m0[i][0] = r[i];
    }
    det(&m0) / det(&m)
}

/// rho(t) = int v Phi dmu with Phi normalized to Phi(y, T) = 1.
pub fn rho_phi_series(kernel: &KernelSolution, history: &FlowHistory, fields: &[HarnackField], phi: &ForwardSolution) -> Result<RhoSeries> {
    let last = phi.slices.last().unwrap();
    if phi.slices.iter().any(|s| s.min() <= 0.0) {
        return Err(Error::precondition("harnack", "test solution is not positive"));
    }
    let tend = *phi.times.last().unwrap();
    if (tend - kernel.terminal).abs() > 1e-9 {
        return Err(Error::precondition("harnack", "test solution must reach the kernel terminal time"));
    }
    let norm = last.sample(kernel.y);
    let n = kernel.grid().dim() as f64;
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for f in fields {
        let ph = interp_slice(&phi.times, &phi.slices, f.t);
        let st = history.state_at(f.t)?;
        let sg = st.metric.sqrt_g();
        let hs = &kernel.slices[f.index];
        let prod = f.v.zip_map(&ph, |a, b| a * b / norm);
        let mut lem = ScalarField::zeros(f.v.grid);
        for k in 0..lem.data.len() {
            if f.valid[k] {
                lem.data[k] = (f.h.data[k] - 0.5 * n) * hs.data[k] * ph.data[k] / norm;
            }
        }
        rows.push((f.t, integrate_x1_weight(&prod, &sg), integrate_x1_weight(&lem, &sg)));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(RhoSeries {
        times: rows.iter().map(|r| r.0).collect(),
        rho: rows.iter().map(|r| r.1).collect(),
        h_weighted: rows.iter().map(|r| r.2).collect(),
        terminal: kernel.terminal,
    })
}

/// Monotonicity, terminal value and the sign of the weighted h integral of a rho series.
pub fn rho_phi_report(name: &str, s: &RhoSeries, tol_mono: f64, tol_terminal: f64) -> CheckReport {
    let mut drop: f64 = 0.0;
    let mut at = None;
    for k in 1..s.rho.len() {
        let d = s.rho[k - 1] - s.rho[k];
        if d > drop {
            drop = d;
            at = Some(s.times[k]);
        }
    }
    let last = s.terminal_estimate();
    let lem = *s.h_weighted.last().unwrap_or(&f64::NAN);
    CheckReport::new(format!("rho_phi_{name}"), at, drop, tol_mono)
        .fail_if(!(last.abs() <= tol_terminal), format!("terminal rho {last:.4e} outside +-{tol_terminal:.1e}"))
        .fail_if(!(lem <= tol_terminal), format!("terminal int (h - n/2) H Phi = {lem:.4e} > {tol_terminal:.1e}"))
        .note(format!(
            "extrapolated terminal rho {last:.4e}, last rho {:.4e}, terminal (h - n/2) integral {lem:.4e}",
            s.rho.last().unwrap_or(&f64::NAN)
        ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, CouplingSchedule, FlowState, RunOptions};
    use crate::geometry::{ReducedMetric, ScalarMap};
    use crate::heat::{periodized_gaussian, solve_conjugate, solve_forward, ForwardOptions, KernelOptions, NEAR_CENTER};
    use std::f64::consts::PI;

    fn flat_history(shape: &[usize], t: f64) -> FlowHistory {
        let g = PeriodicGrid::new(shape).unwrap();
        let s = FlowState::new(0.0, ReducedMetric::flat(g), ScalarMap::constant(&g, 0.0)).unwrap();
        run(&s, &CouplingSchedule::constant(1.0), RunOptions { t_final: t, dt: None, snapshot_every: 1 }).unwrap()
    }

    /// Kernel with slices replaced by the exact image sum.
    fn oracle(h: &FlowHistory, y: [f64; 3]) -> KernelSolution {
        let mut k = solve_conjugate(h, y, 0.1, KernelOptions { steps_per_log: Some(40.0), ..Default::default() }).unwrap();
        let g = h.grid();
        for i in 0..k.slices.len() {
            k.slices[i] = periodized_gaussian(&g, y, k.tau(i), 6);
        }
        k
    }

    #[test]
    fn flat_v_vanishes_near_center() {
        let h = flat_history(&[128, 128], 0.1);
        let k = solve_conjugate(&h, [PI, PI, 0.0], 0.1, KernelOptions::default()).unwrap();
        let f = compute_all(&k, &h).unwrap();
        for x in &f {
            assert!(x.max_abs_ratio_near(&k, NEAR_CENTER) <= 1e-2, "t {} ratio {}", x.t, x.max_abs_ratio_near(&k, NEAR_CENTER));
        }
    }

    #[test]
    fn flat_oracle_identity_both_sides_vanish() {
        let h = flat_history(&[128, 128], 0.1);
        let k = oracle(&h, [PI, PI, 0.0]);
        let f = compute_all(&k, &h).unwrap();
        assert!(harnack_sign_check(&f, 1e-10).pass);
        let b = boxstar_v(&k, &h, &f, BoxStarOptions::default()).unwrap();
        assert!(b.residual < 1e-6, "{}", b.residual);
        assert!(b.max_rhs <= 1e-8);
    }

    #[test]
    fn lyh_static_point_closed_form() {
        let h = flat_history(&[128, 128], 0.1);
        let y = [PI, PI, 0.0];
        let k = oracle(&h, y);
        let d = 0.4;
        let r = lyh_along_curve(&k, &h, "static", &|_| [PI + d, PI, 0.0]).unwrap();
        for row in &r.rows {
            let tau = row[1];
            assert!((row[2] + d * d / (4.0 * tau * tau)).abs() < 1e-3 * d * d / (4.0 * tau * tau), "{row:?}");
            assert!((row[3] + d * d / (8.0 * tau * tau)).abs() < 1e-3 * d * d / (8.0 * tau * tau), "{row:?}");
        }
        assert!(r.first < 0.0 && r.second < 0.0);
    }

    #[test]
    fn gradient_estimate_constant_solution() {
        let h = flat_history(&[128, 32], 0.1);
        let mut k = solve_conjugate(&h, [PI, PI, 0.0], 0.1, KernelOptions::default()).unwrap();
        for s in k.slices.iter_mut() {
            s.data.iter_mut().for_each(|v| *v = 0.3);
        }
        let r = gradient_estimate_check(&k, &h, 0.0, 1.0, 0.0).unwrap();
        assert!(r.pass && r.max_violation <= 0.0, "{r:?}");
    }

    #[test]
    fn flat_oracle_gradient_estimate_and_rho() {
        let h = flat_history(&[128, 128], 0.1);
        let k = oracle(&h, [PI, PI, 0.0]);
        assert!(gradient_estimate_check(&k, &h, 2.0 * k.tau0, 1.05, 0.0).unwrap().pass);
        let f = compute_all(&k, &h).unwrap();
        let g = h.grid();
        let phi0 = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0].cos() * x[1].sin());
        let phi = solve_forward(&h, &phi0, 0.0, 0.1, ForwardOptions::default()).unwrap();
        let rs = rho_phi_series(&k, &h, &f, &phi).unwrap();
        assert!(rs.rho.iter().all(|r| r.abs() < 1e-3));
        assert!(rho_phi_report("flat", &rs, 1e-6, 1e-3).pass);
    }

    #[test]
    fn quadratic_fit_recovers_intercept() {
        let pts: Vec<(f64, f64)> = (1..8).map(|i| i as f64 * 0.1).map(|x| (x, -0.2 + 3.0 * x - 0.5 * x * x)).collect();
        assert!((quadratic_intercept(&pts) + 0.2).abs() < 1e-10);
    }

    #[test]
    fn dilate_grows_by_radius() {
        let g = PeriodicGrid::new(&[16, 16]).unwrap();
        let mut m = vec![false; g.len()];
        m[g.index(&[0, 0])] = true;
        let d = dilate(&g, &m, 2);
        assert_eq!(d.iter().filter(|&&b| b).count(), 25);
        assert!(d[g.index(&[14, 2])] && !d[g.index(&[13, 0])]);
    }
}
