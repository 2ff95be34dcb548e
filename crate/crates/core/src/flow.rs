//! Explicit RK4 integration of the coupled system
//!   d/dt a_1 = -2 R_11 + 2 alpha (phi')^2,  d/dt a_j = -2 R_jj,  d/dt phi = Lap phi
//! inside the class of x1-dependent diagonal metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bianchi_residual, divergence_s, CoupledQuantities, ReducedMetric, ScalarMap};
use crate::grid::{d1_periodic, d2_periodic};
use crate::report::{CheckReport, Worst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    Constant,
    LinearClipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSchedule {
    pub kind: CouplingKind,
    pub alpha0: f64,
    pub alpha_bar: f64,
    pub slope: f64,
}

impl CouplingSchedule {
    pub fn constant(alpha: f64) -> Self {
        CouplingSchedule { kind: CouplingKind::Constant, alpha0: alpha, alpha_bar: alpha, slope: 0.0 }
    }

    /// alpha(t) = max(alpha_bar, alpha0 + slope t).
    pub fn linear_clipped(alpha0: f64, alpha_bar: f64, slope: f64) -> Result<Self> {
        let s = CouplingSchedule { kind: CouplingKind::LinearClipped, alpha0, alpha_bar, slope };
        s.validate()?;
        Ok(s)
    }

    /// Coupling positive, bounded below by alpha_bar and non-increasing.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.alpha_bar > 0.0) {
            return Err(Error::Config(format!(
                "coupling must be positive: alpha0 = {}, alpha_bar = {}",
                self.alpha0, self.alpha_bar
            )));
        }
        if self.slope > 0.0 {
            return Err(Error::Config(format!(
                "coupling slope {} > 0: alpha(t) must be a positive non-increasing function",
                self.slope
            )));
        }
        if self.alpha0 < self.alpha_bar {
            return Err(Error::Config("alpha0 below the lower bound alpha_bar".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            CouplingKind::Constant => self.alpha0,
            CouplingKind::LinearClipped => (self.alpha0 + self.slope * t).max(self.alpha_bar),
        }
    }

    pub fn alpha_prime(&self, t: f64) -> f64 {
        match self.kind {
            CouplingKind::Constant => 0.0,
            CouplingKind::LinearClipped => {
                if self.alpha0 + self.slope * t > self.alpha_bar {
                    self.slope
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.kind == CouplingKind::Constant || self.slope == 0.0
    }

    /// Time at which the clipped schedule hits its floor, if any.
    pub fn kink(&self) -> Option<f64> {
        match self.kind {
            CouplingKind::LinearClipped if self.slope < 0.0 => Some((self.alpha_bar - self.alpha0) / self.slope),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub metric: ReducedMetric,
    pub map: ScalarMap,
}

impl FlowState {
    pub fn new(t: f64, metric: ReducedMetric, map: ScalarMap) -> Result<Self> {
        if map.phi.len() != metric.grid.n1() {
            return Err(Error::Shape("map and metric sample counts differ".into()));
        }
        Ok(FlowState { t, metric, map })
    }

    pub fn quantities(&self, schedule: &CouplingSchedule) -> Result<CoupledQuantities> {
        CoupledQuantities::new(&self.metric, &self.map, schedule.alpha(self.t))
    }

    /// Largest stable step: 0.2 h1^2 min(a) / max(1, sup |Ric|).
    pub fn cfl_limit(&self) -> f64 {
        let h = self.metric.grid.spacing(0);
        let c = self.metric.curvature();
        0.2 * h * h * self.metric.min_coefficient() / c.ric_scale(&self.metric).max(1.0)
    }

    fn rhs(&self, alpha: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let q = CoupledQuantities::new(&self.metric, &self.map, alpha)?;
        let n = self.metric.dim();
        let mut da = Vec::with_capacity(n);
        for k in 0..n {
            let mut d: Vec<f64> = q.curvature.ric[k].iter().map(|r| -2.0 * r).collect();
            if k == 0 {
                for (i, v) in d.iter_mut().enumerate() {
                    *v += 2.0 * alpha * q.dphi[i] * q.dphi[i];
                }
            }
            da.push(d);
        }
        Ok((da, q.tension))
    }

    fn axpy(&self, dt: f64, k: &(Vec<Vec<f64>>, Vec<f64>)) -> Result<FlowState> {
        let a: Vec<Vec<f64>> = self
            .metric
            .a
            .iter()
            .zip(&k.0)
            .map(|(a, d)| a.iter().zip(d).map(|(x, y)| x + dt * y).collect())
            .collect();
        let phi: Vec<f64> = self.map.phi.iter().zip(&k.1).map(|(x, y)| x + dt * y).collect();
        let metric = ReducedMetric::new(self.metric.grid, a).map_err(|e| Error::BlowUp {
            t: self.t + dt,
            reason: e.to_string(),
        })?;
        let map = ScalarMap::new(phi).map_err(|e| Error::BlowUp { t: self.t + dt, reason: e.to_string() })?;
        Ok(FlowState { t: self.t + dt, metric, map })
    }
}

/// One classical RK4 step.
pub fn step(state: &FlowState, schedule: &CouplingSchedule, dt: f64) -> Result<FlowState> {
    let t = state.t;
    let k1 = state.rhs(schedule.alpha(t))?;
    let s2 = state.axpy(0.5 * dt, &k1)?;
    let k2 = s2.rhs(schedule.alpha(t + 0.5 * dt))?;
    let s3 = state.axpy(0.5 * dt, &k2)?;
    let k3 = s3.rhs(schedule.alpha(t + 0.5 * dt))?;
    let s4 = state.axpy(dt, &k3)?;
    let k4 = s4.rhs(schedule.alpha(t + dt))?;
    let n = state.metric.dim();
    let combine = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..a.len()).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
    };
    let da: Vec<Vec<f64>> = (0..n).map(|k| combine(&k1.0[k], &k2.0[k], &k3.0[k], &k4.0[k])).collect();
    let dphi = combine(&k1.1, &k2.1, &k3.1, &k4.1);
    let next = state.axpy(dt, &(da, dphi))?;
    let mut next = next;
    next.t = t + dt;
    if next.metric.a.iter().flatten().chain(next.map.phi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { t: next.t, reason: "NaN in state".into() });
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct FlowHistory {
    pub snapshots: Vec<FlowState>,
    pub schedule: CouplingSchedule,
    pub terminal_time: f64,
    pub dt: f64,
    pub snapshot_dt: f64,
    /// smallest ratio of the CFL limit to dt seen along the run
    pub cfl_margin: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub t_final: f64,
    /// fixed step; None picks the CFL step of the initial state
    pub dt: Option<f64>,
    pub snapshot_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { t_final: 0.1, dt: None, snapshot_every: 1 }
    }
}

/// Integrate to `t_final`. Any failure returns the error; see `run_truncating`
/// for the partial history.
pub fn run(initial: &FlowState, schedule: &CouplingSchedule, opts: RunOptions) -> Result<FlowHistory> {
    let (h, err) = run_truncating(initial, schedule, opts)?;
    match err {
        Some(e) => Err(e),
        None => Ok(h),
    }
}

pub fn run_truncating(
    initial: &FlowState,
    schedule: &CouplingSchedule,
    opts: RunOptions,
) -> Result<(FlowHistory, Option<Error>)> {
    if !(opts.t_final >= 0.0) {
        return Err(Error::precondition("flow", "T must be nonnegative"));
    }
    let every = opts.snapshot_every.max(1);
    let mut snapshots = vec![initial.clone()];
    if opts.t_final == 0.0 {
        let h = FlowHistory {
            snapshots,
            schedule: *schedule,
            terminal_time: initial.t,
            dt: 0.0,
            snapshot_dt: 0.0,
            cfl_margin: f64::INFINITY,
        };
        return Ok((h, None));
    }
    let cfl = initial.cfl_limit();
    let dt_target = opts.dt.unwrap_or(cfl).min(opts.t_final);
    let mut nsteps = (opts.t_final / dt_target - 1e-9).ceil().max(1.0) as usize;
    nsteps = nsteps.div_ceil(every) * every;
    let dt = opts.t_final / nsteps as f64;
    let mut state = initial.clone();
    let mut margin = cfl / dt;
    let mut failure = None;
    for k in 1..=nsteps {
        let lim = state.cfl_limit();
        margin = margin.min(lim / dt);
        if dt > 1.5 * lim {
            failure = Some(Error::BlowUp { t: state.t, reason: format!("step {dt:.3e} exceeds CFL limit {lim:.3e}") });
            break;
        }
        match step(&state, schedule, dt) {
            Ok(mut s) => {
                s.t = initial.t + k as f64 * dt;
                state = s;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        if k % every == 0 {
            snapshots.push(state.clone());
        }
    }
    let terminal_time = snapshots.last().unwrap().t;
    let h = FlowHistory { snapshots, schedule: *schedule, terminal_time, dt, snapshot_dt: dt * every as f64, cfl_margin: margin };
    Ok((h, failure))
}

impl FlowHistory {
    pub fn initial(&self) -> &FlowState {
        &self.snapshots[0]
    }

    pub fn start_time(&self) -> f64 {
        self.snapshots[0].t
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn grid(&self) -> crate::grid::PeriodicGrid {
        self.snapshots[0].metric.grid
    }

    /// Linear interpolation between snapshots.
    pub fn state_at(&self, t: f64) -> Result<FlowState> {
        let t0 = self.start_time();
        let eps = 1e-12 * (1.0 + self.terminal_time.abs());
        if t < t0 - eps || t > self.terminal_time + eps {
            return Err(Error::precondition(
                "flow",
                format!("time {t} outside history [{t0}, {}]", self.terminal_time),
            ));
        }
        if self.snapshots.len() == 1 {
            let mut s = self.snapshots[0].clone();
            s.t = t;
            return Ok(s);
        }
        let u = ((t - t0) / self.snapshot_dt).clamp(0.0, (self.snapshots.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.snapshots.len() - 2);
        let w = u - i as f64;
        let (a, b) = (&self.snapshots[i], &self.snapshots[i + 1]);
        if w == 0.0 {
            let mut s = a.clone();
            s.t = t;
            return Ok(s);
        }
        let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| (1.0 - w) * p + w * q).collect() };
        let metric = ReducedMetric::new(
            a.metric.grid,
            a.metric.a.iter().zip(&b.metric.a).map(|(x, y)| lerp(x, y)).collect(),
        )?;
        let map = ScalarMap::new(lerp(&a.map.phi, &b.map.phi))?;
        Ok(FlowState { t, metric, map })
    }

    pub fn quantities_at(&self, t: f64) -> Result<(FlowState, CoupledQuantities)> {
        let s = self.state_at(t)?;
        let q = s.quantities(&self.schedule)?;
        Ok((s, q))
    }

    /// Curvature bounds k1..k4 (and the upper bound of S_ij) over all snapshots.
    pub fn curvature_bounds(&self) -> Result<CurvatureBounds> {
        let mut b = CurvatureBounds::default();
        for s in &self.snapshots {
            let q = s.quantities(&self.schedule)?;
            b.k1 = b.k1.max(q.k1);
            b.k2 = b.k2.max(q.k2);
            b.k3 = b.k3.max(q.k3);
            b.k4 = b.k4.max(q.k4);
            b.k_upper = b.k_upper.max(q.k_upper);
        }
        Ok(b)
    }

    pub fn volume_series(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.metric.volume()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CurvatureBounds {
    /// -Ric <= k1 g
    pub k1: f64,
    /// -S_ij <= k2 g
    pub k2: f64,
    /// |grad S|^2 <= k3
    pub k3: f64,
    /// |S| <= k4
    pub k4: f64,
    /// S_ij <= k_upper g
    pub k_upper: f64,
}

/// Laplacian of an x1 profile.
pub fn profile_laplacian(m: &ReducedMetric, q: &CoupledQuantities, f: &[f64]) -> Vec<f64> {
    let h = m.grid.spacing(0);
    let fp = d1_periodic(f, h);
    let fpp = d2_periodic(f, h);
    let c = &q.curvature;
    (0..f.len()).map(|i| (fpp[i] + fp[i] * (c.sigma_t(i) - c.kappa[i])) / m.a[0][i]).collect()
}

/// Residual of dS/dt = Lap S + 2 alpha |tension|^2 + 2 |S_ij|^2 - alpha' |grad phi|^2
/// at interior snapshots, time derivative by central differences.
pub fn evol_s_residual(history: &FlowHistory) -> Result<CheckReport> {
    let k = history.snapshots.len();
    if k < 3 {
        return Err(Error::precondition("flow", "evolution residual needs at least 3 snapshots"));
    }
    let dts = history.snapshot_dt;
    let sch = &history.schedule;
    let qs: Vec<CoupledQuantities> = history.snapshots.iter().map(|s| s.quantities(sch)).collect::<Result<_>>()?;
    let mut worst = Worst::default();
    for i in 1..k - 1 {
        let t = history.snapshots[i].t;
        if let Some(tk) = sch.kink() {
            if (t - tk).abs() <= dts * 1.0001 {
                continue;
            }
        }
        let st = &history.snapshots[i];
        let q = &qs[i];
        let lap = profile_laplacian(&st.metric, q, &q.s);
        let sn = q.s_ij_norm_sq(&st.metric);
        let (al, alp) = (sch.alpha(t), sch.alpha_prime(t));
        let mut r: f64 = 0.0;
        for x in 0..q.s.len() {
            let dsdt = (qs[i + 1].s[x] - qs[i - 1].s[x]) / (2.0 * dts);
            let rhs = lap[x] + 2.0 * al * q.tension[x] * q.tension[x] + 2.0 * sn[x] - alp * q.energy[x];
            r = r.max((dsdt - rhs).abs());
        }
        worst.update(r, t);
    }
    Ok(CheckReport::new("evolution_of_S", worst.time, worst.value, f64::INFINITY))
}

/// Residual of dV/dt = -int S dmu along the snapshots.
pub fn volume_identity_residual(history: &FlowHistory) -> Result<CheckReport> {
    let k = history.snapshots.len();
    if k < 3 {
        return Err(Error::precondition("flow", "volume identity needs at least 3 snapshots"));
    }
    let vol = history.volume_series();
    let mut worst = Worst::default();
    for i in 1..k - 1 {
        let s = &history.snapshots[i];
        let q = s.quantities(&history.schedule)?;
        let g = s.metric.grid;
        let sg = s.metric.sqrt_g();
        let int_s: f64 = q.s.iter().zip(&sg).map(|(a, b)| a * b).sum::<f64>() * g.cell_volume() * g.plane() as f64;
        let dv = (vol[i + 1] - vol[i - 1]) / (2.0 * history.snapshot_dt);
        worst.update((dv + int_s).abs(), s.t);
    }
    Ok(CheckReport::new("volume_identity", worst.time, worst.value, f64::INFINITY))
}

/// S(., t) >= 1/(m0 - c_n t) with 1/m0 = inf S(., 0), c_n = 2/n; plus
/// monotonicity of inf S when inf S(0) >= 0.
pub fn s_min_monotonicity(history: &FlowHistory, tol: f64) -> Result<CheckReport> {
    let n = history.grid().dim() as f64;
    let cn = 2.0 / n;
    let q0 = history.initial().quantities(&history.schedule)?;
    let s0 = q0.inf_s();
    let mut worst = Worst::default();
    let mut prev = s0;
    let mut mono = 0.0f64;
    for s in &history.snapshots {
        let t = s.t - history.start_time();
        let q = s.quantities(&history.schedule)?;
        let inf = q.inf_s();
        let env = s_envelope(s0, cn, t);
        worst.update(env - inf, s.t);
        if s0 >= 0.0 {
            mono = mono.max(prev - inf);
        }
        prev = inf;
    }
    let mut r = CheckReport::new("S_lower_envelope", worst.time, worst.value, tol)
        .note(format!("inf S(0) = {s0:.6e}, c_n = {cn}"));
    if s0 >= 0.0 {
        r = r
            .note(format!("largest decrease of inf S between snapshots: {mono:.3e}"))
            .fail_if(mono > tol, "inf S decreased although inf S(0) >= 0");
    }
    Ok(r)
}

/// Lower barrier 1/(m0 - c_n t) from the ODE comparison; zero when inf S(0) = 0.
pub fn s_envelope(inf_s0: f64, cn: f64, t: f64) -> f64 {
    if inf_s0 == 0.0 {
        0.0
    } else {
        1.0 / (1.0 / inf_s0 - cn * t)
    }
}

/// D(S, X) = 2 alpha |tension - X(phi)|^2 - alpha' |grad phi|^2 for probe fields
/// X = c(x1) d_1 at every snapshot, together with the direct evaluation of
///   dS/dt - Lap S - 2|S_ij|^2 + 4 div S(X) - 2 dS(X) + 2 (Ric - S_ij)(X, X)
/// whose agreement with the closed form is reported in the notes.
pub fn d_nonnegativity(history: &FlowHistory, probes: &[Vec<f64>]) -> Result<CheckReport> {
    let sch = &history.schedule;
    let k = history.snapshots.len();
    let mut worst = Worst::default();
    let mut ident: f64 = 0.0;
    let qs: Vec<CoupledQuantities> = history.snapshots.iter().map(|s| s.quantities(sch)).collect::<Result<_>>()?;
    for (i, s) in history.snapshots.iter().enumerate() {
        let (al, alp) = (sch.alpha(s.t), sch.alpha_prime(s.t));
        for x in probes {
            let b = bianchi_residual(&s.metric, &s.map, al, alp, x)?;
            let m = b.d.iter().cloned().fold(f64::INFINITY, f64::min);
            worst.update(-m, s.t);
            if i > 0 && i + 1 < k && sch.kink().map_or(true, |tk| (s.t - tk).abs() > history.snapshot_dt * 1.0001) {
                let q = &qs[i];
                let lap = profile_laplacian(&s.metric, q, &q.s);
                let sn = q.s_ij_norm_sq(&s.metric);
                let div = divergence_s(&s.metric, q);
                let sp = d1_periodic(&q.s, s.metric.grid.spacing(0));
                for p in 0..q.s.len() {
                    let dsdt = (qs[i + 1].s[p] - qs[i - 1].s[p]) / (2.0 * history.snapshot_dt);
                    let xv = x[p];
                    let direct = dsdt - lap[p] - 2.0 * sn[p] + 4.0 * div[p] * xv - 2.0 * sp[p] * xv
                        + 2.0 * al * (q.dphi[p] * xv).powi(2);
                    ident = ident.max((direct - b.d[p]).abs());
                }
            }
        }
    }
    Ok(CheckReport::new("D_nonnegative", worst.time, worst.value, 1e-10)
        .note(format!("direct vs closed-form D residual {ident:.3e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FourierProfile;
    use crate::grid::PeriodicGrid;

    fn bumpy(n1: usize) -> FlowState {
        let g = PeriodicGrid::new(&[n1, 16]).unwrap();
        let a1 = FourierProfile { mean: 1.0, cos: vec![(1, 0.1)], sin: vec![] };
        let a2 = FourierProfile { mean: 1.0, cos: vec![], sin: vec![(1, 0.3)] };
        let m = ReducedMetric::from_profiles(g, &[a1, a2]).unwrap();
        let phi = ScalarMap::from_profile(&g, &FourierProfile { mean: 0.0, cos: vec![(2, 0.2)], sin: vec![] });
        FlowState::new(0.0, m, phi).unwrap()
    }

    #[test]
    fn flat_fixed_point() {
        let g = PeriodicGrid::new(&[32, 16]).unwrap();
        let s = FlowState::new(0.0, ReducedMetric::flat(g), ScalarMap::constant(&g, 0.3)).unwrap();
        let n = step(&s, &CouplingSchedule::constant(1.0), 1e-3).unwrap();
        for (a, b) in n.metric.a.iter().flatten().zip(s.metric.a.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_is_ricci_flow() {
        let s = bumpy(32);
        let mut pure = s.clone();
        pure.map = ScalarMap::constant(&s.metric.grid, 0.0);
        let opts = RunOptions { t_final: 0.01, dt: None, snapshot_every: 1 };
        let a = run(&s, &CouplingSchedule::constant(0.0), opts).unwrap();
        let b = run(&pure, &CouplingSchedule::constant(0.0), opts).unwrap();
        assert_eq!(a.snapshots.last().unwrap().metric, b.snapshots.last().unwrap().metric);
    }

    #[test]
    fn zero_length_run() {
        let s = bumpy(32);
        let h = run(&s, &CouplingSchedule::constant(1.0), RunOptions { t_final: 0.0, dt: None, snapshot_every: 1 }).unwrap();
        assert_eq!(h.snapshots.len(), 1);
        assert_eq!(h.snapshots[0], s);
    }

    #[test]
    fn schedule_validation() {
        assert!(CouplingSchedule::linear_clipped(2.0, 1.0, 0.5).is_err());
        let s = CouplingSchedule::linear_clipped(2.0, 1.0, -5.0).unwrap();
        assert_eq!(s.alpha(1.0), 1.0);
        assert_eq!(s.alpha_prime(0.0), -5.0);
        assert_eq!(s.alpha_prime(0.3), 0.0);
    }

    #[test]
    fn interpolation_is_linear() {
        let s = bumpy(32);
        let h = run(&s, &CouplingSchedule::constant(1.0), RunOptions { t_final: 0.05, dt: None, snapshot_every: 2 }).unwrap();
        let (a, b) = (&h.snapshots[1], &h.snapshots[2]);
        let mid = h.state_at(0.5 * (a.t + b.t)).unwrap();
        let want = 0.5 * (a.metric.a[1][3] + b.metric.a[1][3]);
        assert!((mid.metric.a[1][3] - want).abs() < 1e-14);
        assert!(h.state_at(1.0).is_err());
    }

    #[test]
    fn envelope_convention() {
        assert_eq!(s_envelope(0.0, 1.0, 0.05), 0.0);
        assert!((s_envelope(-0.5, 1.0, 0.1) - 1.0 / (-2.1)).abs() < 1e-15);
    }
}
