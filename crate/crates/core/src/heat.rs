//! Forward heat solver and conjugate heat kernel along a flow history.
//!
//! Both equations are integrated by Crank-Nicolson per Fourier mode along the
//! symmetry axes; each mode is a cyclic band system in x1.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::banded::CyclicBanded;
use crate::error::{Error, Result};
use crate::flow::FlowHistory;
use crate::geometry::{ReducedMetric, X1Operator};
use crate::grid::{ModePlan, PeriodicGrid, ScalarField};
use crate::report::CheckReport;

/// Relative threshold below which kernel values are masked.
pub const MASK_THRESHOLD: f64 = 1e-10;

/// Points with H >= NEAR_CENTER * max H count as near the kernel center.
pub const NEAR_CENTER: f64 = 0.1;

/// Operator data at one instant: Lap_{g(t)} - potential.
struct Frame {
    op: X1Operator,
    inv_a: Vec<Vec<f64>>,
    pot: Vec<f64>,
}

impl Frame {
    fn new(metric: &ReducedMetric, pot: Vec<f64>) -> Self {
        let inv_a = metric.a[1..].iter().map(|p| p.iter().map(|v| 1.0 / v).collect()).collect();
        Frame { op: metric.x1_operator(), inv_a, pot }
    }

    fn symbol(&self, k: [f64; 2], i: usize) -> f64 {
        let mut s = k[0] * k[0] * self.inv_a[0][i];
        if self.inv_a.len() > 1 {
            s += k[1] * k[1] * self.inv_a[1][i];
        }
        s + self.pot[i]
    }
}

/// Crank-Nicolson stepping in mode space.
struct ModeStepper {
    plan: ModePlan,
    grid: PeriodicGrid,
    // distinct (k2^2, k3^2) classes and the class of each mode
    classes: Vec<[f64; 2]>,
    class_of: Vec<usize>,
}

impl ModeStepper {
    fn new(grid: PeriodicGrid) -> Self {
        let plan = ModePlan::new(grid);
        let mut classes: Vec<[f64; 2]> = Vec::new();
        let mut class_of = Vec::with_capacity(grid.plane());
        for m in 0..grid.plane() {
            let k = plan.wavenumbers(m);
            let key = [k[0].abs(), k[1].abs()];
            let pos = classes.iter().position(|c| (c[0] - key[0]).abs() < 1e-9 && (c[1] - key[1]).abs() < 1e-9);
            match pos {
                Some(p) => class_of.push(p),
                None => {
                    classes.push(key);
                    class_of.push(classes.len() - 1);
                }
            }
        }
        ModeStepper { plan, grid, classes, class_of }
    }

    /// modes <- (I - c L_new)^{-1} (I + c L_old) modes with c = dt/2.
    fn step(&self, modes: &mut [Complex64], old: &Frame, new: &Frame, dt: f64) -> Result<()> {
        let n1 = self.grid.n1();
        let p = self.grid.plane();
        let c = 0.5 * dt;
        let facs: Vec<CyclicBanded> = self
            .classes
            .iter()
            .map(|k| {
                let extra: Vec<f64> = (0..n1).map(|i| c * new.symbol(*k, i)).collect();
                new.op.factor(1.0, -c, &extra.iter().map(|v| -v).collect::<Vec<_>>())
            })
            .collect::<Result<_>>()?;
        let mut re = vec![0.0; n1];
        let mut im = vec![0.0; n1];
        let mut line = vec![Complex64::new(0.0, 0.0); n1];
        for m in 0..p {
            let k = self.classes[self.class_of[m]];
            for i in 0..n1 {
                let z = modes[i * p + m];
                re[i] = z.re;
                im[i] = z.im;
            }
            let (lr, li) = (old.op.apply(&re), old.op.apply(&im));
            for i in 0..n1 {
                let s = old.symbol(k, i);
                line[i] = Complex64::new(re[i] + c * (lr[i] - s * re[i]), im[i] + c * (li[i] - s * im[i]));
            }
            facs[self.class_of[m]].solve(&mut line);
            for i in 0..n1 {
                modes[i * p + m] = line[i];
            }
        }
        Ok(())
    }
}

/// Geometric time grid: steps of size elapsed/ratio_inv capped at max_step,
/// starting from `first`, landing exactly on `end`.
pub fn geometric_steps(start: f64, end: f64, first: f64, per_unit_log: f64, max_step: f64) -> Vec<f64> {
    let mut pts = vec![start];
    let mut t = start;
    while t < end - 1e-14 {
        let dt = (t / per_unit_log).max(first).min(max_step);
        let next = if t + dt > end - 0.25 * dt { end } else { t + dt };
        pts.push(next);
        t = next;
    }
    pts
}

#[derive(Debug, Clone, Copy)]
pub struct KernelOptions {
    /// seed width; None uses max(4 h1^2, 1e-3)
    pub tau0: Option<f64>,
    /// earliest time of the backward solve
    pub t_min: f64,
    /// tau steps are tau / steps_per_log (log-uniform), capped by max_step.
    /// None scales with 1/h1^2 so the time error tracks the seed width.
    pub steps_per_log: Option<f64>,
    pub max_step: f64,
    /// keep every k-th step as a slice (the last step always kept)
    pub record_every: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { tau0: None, t_min: 0.0, steps_per_log: None, max_step: 2.5e-3, record_every: 1 }
    }
}

pub fn tau0_floor(grid: &PeriodicGrid) -> f64 {
    (4.0 * grid.spacing(0).powi(2)).max(1e-3)
}

/// 160 at 128 points per 2 pi, quadrupling per halving of h1.
pub fn default_steps_per_log(grid: &PeriodicGrid) -> f64 {
    (0.385 / grid.spacing(0).powi(2)).max(40.0)
}

#[derive(Debug, Clone)]
pub struct KernelSolution {
    pub y: [f64; 3],
    pub terminal: f64,
    pub tau0: f64,
    /// t values of the slices, decreasing from T - tau0
    pub times: Vec<f64>,
    pub slices: Vec<ScalarField>,
    /// conjugate mass int H dmu_{g(t)} per slice
    pub mass: Vec<f64>,
}

impl KernelSolution {
    pub fn tau(&self, i: usize) -> f64 {
        self.terminal - self.times[i]
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.tau(i)).collect()
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.slices[0].grid
    }

    pub fn mask(&self, i: usize) -> Vec<bool> {
        let s = &self.slices[i];
        let thr = MASK_THRESHOLD * s.max();
        s.data.iter().map(|&v| !(v >= thr)).collect()
    }

    pub fn masked_fraction(&self, i: usize) -> f64 {
        let m = self.mask(i);
        m.iter().filter(|&&b| b).count() as f64 / m.len() as f64
    }

    /// h = -ln H - (n/2) ln(4 pi tau); masked points hold the threshold value.
    pub fn h_field(&self, i: usize) -> ScalarField {
        let s = &self.slices[i];
        let n = s.grid.dim() as f64;
        let tau = self.tau(i);
        let floor = MASK_THRESHOLD * s.max();
        s.map(|v| -(v.max(floor)).ln() - 0.5 * n * (4.0 * PI * tau).ln())
    }

    /// Index of the slice nearest to time t.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn value_at(&self, i: usize, node: usize) -> f64 {
        self.slices[i].data[node]
    }
}

fn mass_of(metric: &ReducedMetric, f: &ScalarField) -> f64 {
    crate::grid::integrate_x1_weight(f, &metric.sqrt_g())
}

/// Unit-mass Gaussian seed of width tau0 around y: the metric quadratic form of
/// `dist_metric` for the exponent, normalized against `mass_metric`.
pub fn gaussian_seed(dist_metric: &ReducedMetric, mass_metric: &ReducedMetric, y: [f64; 3], tau0: f64) -> ScalarField {
    let n = dist_metric.dim() as f64;
    let d2 = dist_metric.seed_distance_sq(y);
    let pref = (4.0 * PI * tau0).powf(-0.5 * n);
    let mut seed = d2.map(|d| pref * (-d / (4.0 * tau0)).exp());
    let m = mass_of(mass_metric, &seed);
    for v in seed.data.iter_mut() {
        *v /= m;
    }
    seed
}

/// Conjugate heat kernel H(., t; y, T) for t from T - tau0 down to t_min.
pub fn solve_conjugate(history: &FlowHistory, y: [f64; 3], terminal: f64, opts: KernelOptions) -> Result<KernelSolution> {
    let grid = history.grid();
    let floor = tau0_floor(&grid);
    let tau0 = opts.tau0.unwrap_or(floor);
    if tau0 < floor * (1.0 - 1e-12) {
        return Err(Error::precondition("heat", format!("seed width {tau0:.3e} below the grid floor {floor:.3e}")));
    }
    if terminal - opts.t_min < 4.0 * tau0 * (1.0 - 1e-12) {
        return Err(Error::precondition("heat", format!("T - t_min = {} < 4 tau0 = {}", terminal - opts.t_min, 4.0 * tau0)));
    }
    if terminal > history.terminal_time + 1e-12 || opts.t_min < history.start_time() - 1e-12 {
        return Err(Error::precondition("heat", "kernel time range outside the flow history"));
    }
    let frame_at = |tau: f64| -> Result<(ReducedMetric, Frame)> {
        let (st, q) = history.quantities_at(terminal - tau)?;
        let f = Frame::new(&st.metric, q.s);
        Ok((st.metric, f))
    };
    let g_t = history.state_at(terminal)?.metric;
    let (m0, mut frame) = frame_at(tau0)?;
    let seed = gaussian_seed(&g_t, &m0, y, tau0);
    let stepper = ModeStepper::new(grid);
    let mut modes = stepper.plan.forward_real(&seed.data);
    let spl = opts.steps_per_log.unwrap_or_else(|| default_steps_per_log(&grid));
    let taus = geometric_steps(tau0, terminal - opts.t_min, tau0 / spl, spl, opts.max_step);
    let mut times = vec![terminal - tau0];
    let mut mass = vec![mass_of(&m0, &seed)];
    let mut slices = vec![seed];
    let every = opts.record_every.max(1);
    for k in 1..taus.len() {
        let (m_new, f_new) = frame_at(taus[k])?;
        stepper.step(&mut modes, &frame, &f_new, taus[k] - taus[k - 1])?;
        frame = f_new;
        if k % every == 0 || k == taus.len() - 1 {
            let f = ScalarField::from_vec(grid, stepper.plan.inverse_real(&modes))?;
            let ms = mass_of(&m_new, &f);
            if !ms.is_finite() || (ms - 1.0).abs() > 0.01 {
                return Err(Error::numerical(
                    "heat",
                    format!("conjugate mass drifted to {ms:.6} at tau = {:.4e} (y = {y:?})", taus[k]),
                ));
            }
            times.push(terminal - taus[k]);
            mass.push(ms);
            slices.push(f);
        }
    }
    Ok(KernelSolution { y, terminal, tau0, times, slices, mass })
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub s: f64,
    /// source time of a kernel; equals s for plain solves
    pub origin: f64,
    pub times: Vec<f64>,
    pub slices: Vec<ScalarField>,
}

impl ForwardSolution {
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub first_step: f64,
    pub steps_per_log: f64,
    pub max_step: f64,
    pub record_every: usize,
    /// extra times that must appear exactly on the time grid
    pub offset: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { first_step: 2.5e-4, steps_per_log: 40.0, max_step: 2.5e-3, record_every: 1, offset: 0.0 }
    }
}

/// du/dt = Lap_{g(t)} u from u(s) = initial up to t_end.
pub fn solve_forward(
    history: &FlowHistory,
    initial: &ScalarField,
    s: f64,
    t_end: f64,
    opts: ForwardOptions,
) -> Result<ForwardSolution> {
    if !(s < t_end) || s < history.start_time() - 1e-12 || t_end > history.terminal_time + 1e-12 {
        return Err(Error::precondition(
            "heat",
            format!("forward range [{s}, {t_end}] outside history [{}, {}]", history.start_time(), history.terminal_time),
        ));
    }
    // elapsed-time grid with steps growing like the elapsed time plus offset
    let e0 = opts.offset.max(opts.first_step);
    let el = geometric_steps(e0, e0 + (t_end - s), opts.first_step, opts.steps_per_log, opts.max_step);
    let ts: Vec<f64> = el.iter().map(|e| (s + (e - e0)).min(t_end)).collect();
    solve_forward_on(history, initial, &ts, opts.record_every)
}

/// Forward solve on an explicit increasing time grid starting at the time of
/// `initial`; every `record_every`-th step and the last are kept.
pub fn solve_forward_on(history: &FlowHistory, initial: &ScalarField, ts: &[f64], record_every: usize) -> Result<ForwardSolution> {
    if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::precondition("heat", "forward time grid must be increasing with at least two points"));
    }
    if ts[0] < history.start_time() - 1e-12 || ts[ts.len() - 1] > history.terminal_time + 1e-12 {
        return Err(Error::precondition("heat", "forward time grid outside the flow history"));
    }
    let grid = history.grid();
    let frame_at = |t: f64| -> Result<Frame> {
        let st = history.state_at(t)?;
        Ok(Frame::new(&st.metric, vec![0.0; grid.n1()]))
    };
    let stepper = ModeStepper::new(grid);
    let mut modes = stepper.plan.forward_real(&initial.data);
    let mut frame = frame_at(ts[0])?;
    let mut times = vec![ts[0]];
    let mut slices = vec![initial.clone()];
    let every = record_every.max(1);
    for k in 1..ts.len() {
        let f_new = frame_at(ts[k])?;
        stepper.step(&mut modes, &frame, &f_new, ts[k] - ts[k - 1])?;
        frame = f_new;
        if k % every == 0 || k == ts.len() - 1 {
            times.push(ts[k]);
            slices.push(ScalarField::from_vec(grid, stepper.plan.inverse_real(&modes))?);
        }
    }
    Ok(ForwardSolution { s: ts[0], origin: ts[0], times, slices })
}

/// Forward kernel H(x, s; ., t) approximated by a Gaussian of width tau0 at
/// s + tau0, then evolved to t_end.
pub fn forward_kernel(history: &FlowHistory, x: [f64; 3], s: f64, t_end: f64, tau0: f64, opts: ForwardOptions) -> Result<ForwardSolution> {
    let st = history.state_at(s)?;
    let at = history.state_at(s + tau0)?;
    let seed = gaussian_seed(&st.metric, &at.metric, x, tau0);
    let mut o = opts;
    o.offset = tau0;
    o.first_step = o.first_step.min(tau0 / o.steps_per_log);
    let mut sol = solve_forward(history, &seed, s + tau0, t_end, o)?;
    sol.origin = s;
    Ok(sol)
}

/// Discrete delta at a grid node with respect to dmu_{g}.
pub fn discrete_delta(metric: &ReducedMetric, node: usize) -> ScalarField {
    let g = metric.grid;
    let mut f = ScalarField::zeros(g);
    let i1 = node / g.plane();
    f.data[node] = 1.0 / (metric.sqrt_g()[i1] * g.cell_volume());
    f
}

/// Image sum of Euclidean heat kernels on the flat torus.
pub fn periodized_gaussian(grid: &PeriodicGrid, y: [f64; 3], tau: f64, images: i64) -> ScalarField {
    let n = grid.dim();
    let pref = (4.0 * PI * tau).powf(-0.5 * n as f64);
    ScalarField::from_fn(*grid, |x| {
        let mut tot = 1.0;
        for a in 0..n {
            let l = grid.length(a);
            let mut s = 0.0;
            for k in -images..=images {
                let d = x[a] - y[a] + k as f64 * l;
                s += (-d * d / (4.0 * tau)).exp();
            }
            tot *= s;
        }
        pref * tot
    })
}

/// Semigroup and duality at sample pairs (x, s), (y, t) on grid nodes.
#[derive(Debug, Clone)]
pub struct KernelPropertyResult {
    pub semigroup_residual: f64,
    pub duality_residual: f64,
    pub degenerate_residual: f64,
}

/// Checks int H(x,s;z,r) H(z,r;y,t) dmu(z,r) = H(x,s;y,t) at intermediate r and
/// the forward/conjugate duality F_x(y,t) = K_y(x,s).
pub fn kernel_properties(
    history: &FlowHistory,
    conj: &KernelSolution,
    x_node: usize,
    s: f64,
    opts: ForwardOptions,
) -> Result<KernelPropertyResult> {
    let grid = conj.grid();
    let t = conj.terminal;
    if s < conj.times.last().copied().unwrap_or(t) - 1e-12 || s >= t {
        return Err(Error::precondition("heat", "sample time s outside the conjugate solution"));
    }
    let x = grid.point(x_node);
    let y_node = nearest_node(&grid, conj.y);
    let is = conj.nearest(s);
    let s = conj.times[is];
    let target = conj.slices[is].data[x_node];
    let fwd = forward_kernel(history, x, s, t, conj.tau0, opts)?;
    let dual = fwd.slices.last().unwrap().data[y_node];
    let duality_residual = (dual - target).abs() / target.abs();
    let mut semi: f64 = 0.0;
    for r_frac in [0.3, 0.5, 0.7] {
        let r = s + r_frac * (t - s);
        let ic = conj.nearest(r);
        let r = conj.times[ic];
        if r - s < 2.0 * conj.tau0 || t - r < 2.0 * conj.tau0 {
            continue;
        }
        let fr = interp_slice(&fwd.times, &fwd.slices, r);
        let m = history.state_at(r)?.metric;
        let prod = fr.zip_map(&conj.slices[ic], |a, b| a * b);
        let v = crate::grid::integrate_x1_weight(&prod, &m.sqrt_g());
        semi = semi.max((v - target).abs() / target.abs());
    }
    // r = s: the forward kernel is the delta at x
    let m = history.state_at(s)?.metric;
    let delta = discrete_delta(&m, x_node);
    let prod = delta.zip_map(&conj.slices[is], |a, b| a * b);
    let v = crate::grid::integrate_x1_weight(&prod, &m.sqrt_g());
    let degenerate_residual = (v - target).abs() / target.abs();
    Ok(KernelPropertyResult { semigroup_residual: semi, duality_residual, degenerate_residual })
}

pub fn interp_slice(times: &[f64], slices: &[ScalarField], t: f64) -> ScalarField {
    let mut j = 0;
    while j + 1 < times.len() && !((times[j] - t) * (times[j + 1] - t) <= 0.0) {
        j += 1;
    }
    if j + 1 >= times.len() {
        let mut b = 0;
        for (i, &s) in times.iter().enumerate() {
            if (s - t).abs() < (times[b] - t).abs() {
                b = i;
            }
        }
        return slices[b].clone();
    }
    let (t0, t1) = (times[j], times[j + 1]);
    let w = if t1 == t0 { 0.0 } else { (t - t0) / (t1 - t0) };
    slices[j].zip_map(&slices[j + 1], |a, b| (1.0 - w) * a + w * b)
}

pub fn nearest_node(grid: &PeriodicGrid, y: [f64; 3]) -> usize {
    let mut idx = [0usize; 3];
    for a in 0..grid.dim() {
        let h = grid.spacing(a);
        idx[a] = ((y[a] / h).round() as i64).rem_euclid(grid.n(a) as i64) as usize;
    }
    grid.index(&idx[..grid.dim()])
}

/// Mass conservation and positivity of a conjugate solution.
pub fn mass_report(k: &KernelSolution, tol: f64) -> CheckReport {
    let mut worst = crate::report::Worst::default();
    for (i, m) in k.mass.iter().enumerate() {
        worst.update((m - 1.0).abs(), k.times[i]);
    }
    let mut r = CheckReport::new("conjugate_mass", worst.time, worst.value, tol);
    let neg = k
        .slices
        .iter()
        .zip(0..)
        .map(|(s, i)| {
            let mask = k.mask(i);
            s.data.iter().zip(&mask).filter(|(v, m)| !**m && **v <= 0.0).count()
        })
        .sum::<usize>();
    r = r.fail_if(neg > 0, format!("{neg} non-positive unmasked values"));
    r
}

/// Explicit full-grid RK4 integration of the conjugate equation with local
/// fourth-order differences; a slow cross-check for coarse grids.
pub fn solve_conjugate_explicit(history: &FlowHistory, seed: &ScalarField, terminal: f64, tau0: f64, tau_end: f64) -> Result<ScalarField> {
    let grid = seed.grid;
    let h = (0..grid.dim()).map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
    let amin = history.snapshots.iter().map(|s| s.metric.min_coefficient()).fold(f64::INFINITY, f64::min);
    let dt_lim = 0.1 * h * h * amin;
    let nsteps = ((tau_end - tau0) / dt_lim).ceil().max(1.0) as usize;
    let dt = (tau_end - tau0) / nsteps as f64;
    let rhs = |tau: f64, f: &ScalarField| -> Result<ScalarField> {
        let (st, q) = history.quantities_at(terminal - tau)?;
        let lap = st.metric.laplacian_local(f)?;
        let sfield = ScalarField::from_x1_profile(grid, &q.s)?;
        Ok(lap.zip_map(&sfield.zip_map(f, |a, b| a * b), |a, b| a - b))
    };
    let mut u = seed.clone();
    let mut tau = tau0;
    for _ in 0..nsteps {
        let k1 = rhs(tau, &u)?;
        let u2 = u.zip_map(&k1, |a, b| a + 0.5 * dt * b);
        let k2 = rhs(tau + 0.5 * dt, &u2)?;
        let u3 = u.zip_map(&k2, |a, b| a + 0.5 * dt * b);
        let k3 = rhs(tau + 0.5 * dt, &u3)?;
        let u4 = u.zip_map(&k3, |a, b| a + dt * b);
        let k4 = rhs(tau + dt, &u4)?;
        for i in 0..u.data.len() {
            u.data[i] += dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
        }
        tau += dt;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, CouplingSchedule, FlowState, RunOptions};
    use crate::geometry::{ReducedMetric, ScalarMap};

    fn flat_history(shape: &[usize], t: f64) -> FlowHistory {
        let g = PeriodicGrid::new(shape).unwrap();
        let s = FlowState::new(0.0, ReducedMetric::flat(g), ScalarMap::constant(&g, 0.0)).unwrap();
        run(&s, &CouplingSchedule::constant(1.0), RunOptions { t_final: t, dt: None, snapshot_every: 1 }).unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let h = flat_history(&[32, 16], 0.1);
        let u0 = ScalarField::constant(h.grid(), 2.0);
        let f = solve_forward(&h, &u0, 0.0, 0.1, ForwardOptions::default()).unwrap();
        for s in &f.slices {
            assert!(s.data.iter().all(|v| (v - 2.0).abs() < 1e-12));
        }
    }

    #[test]
    fn flat_kernel_matches_image_sum() {
        let h = flat_history(&[128, 64], 0.1);
        let y = [PI, PI, 0.0];
        let k = solve_conjugate(&h, y, 0.1, KernelOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..k.slices.len() {
            let mut w: f64 = 0.0;
            let exact = periodized_gaussian(&h.grid(), y, k.tau(i), 4);
            let core = NEAR_CENTER * exact.max();
            for (a, b) in k.slices[i].data.iter().zip(&exact.data) {
                if *b >= core {
                    w = w.max((a - b).abs() / b);
                }
            }
            worst = worst.max(w);
        }
        assert!(worst < 1e-3, "{worst}");
        assert!(k.mass.iter().all(|m| (m - 1.0).abs() < 1e-8));
    }

    #[test]
    fn refuses_narrow_seed() {
        let h = flat_history(&[32, 16], 0.1);
        let r = solve_conjugate(&h, [0.0; 3], 0.1, KernelOptions { tau0: Some(1e-4), ..Default::default() });
        assert!(matches!(r, Err(Error::Precondition { .. })));
    }
}
