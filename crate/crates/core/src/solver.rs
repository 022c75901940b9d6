//! Time stepping of the radial free boundary problem
//!
//! ```text
//! u_t = d (∫_0^h J̃(r, ρ) u(t, ρ) dρ - u) + f(u),   0 ≤ r < h(t),
//! h'  = μ / h^{N-1} ∫_0^h r^{N-1} u(t, r) T(r, h) dr,
//! ```
//!
//! with `u(t, h(t)) = 0` and `T(r, h) = 1 - ∫_0^h J̃(r, ρ) dρ`.
//!
//! The grid is the fixed lattice `r_i = i·dr` cut at the moving boundary:
//! nodes `0..=m` with `r_m < h` carry values and the boundary node `r = h`
//! carries zero. When `h` passes a lattice node, that node joins the grid
//! with the value of the linear interpolant between `(r_m, u_m)` and
//! `(h, 0)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::analysis::{estimate_speed, FitWindow};
use crate::eigen::find_l_star;
use crate::error::{Error, Result};
use crate::kernel::{sphere_area, validate_kernel, RadialKernel};
use crate::nonlinearity::Nonlinearity;
use crate::operator::{last_node, RadialOperator};
use crate::tables::KernelTables;

/// `dt·(d + Lip f)` must stay below this.
pub const STABILITY_LIMIT: f64 = 0.9;
/// Default `dt·(d + Lip f)`.
pub const DEFAULT_CFL: f64 = 0.1;

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial density on `[0, h0]`.
#[derive(Clone)]
pub enum InitialData {
    /// `A (1 - (r/h0)^2)`.
    Parabolic { amplitude: f64 },
    /// `A (1 - (r/h0)^p)`.
    Power { amplitude: f64, exponent: f64 },
    /// `g(r)`, required to vanish at `h0` and be positive inside.
    Custom(ProfileFn),
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Parabolic { amplitude } => write!(f, "Parabolic({amplitude})"),
            InitialData::Power { amplitude, exponent } => write!(f, "Power({amplitude}, {exponent})"),
            InitialData::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl InitialData {
    pub fn eval(&self, r: f64, h0: f64) -> f64 {
        if r >= h0 {
            return 0.0;
        }
        match self {
            InitialData::Parabolic { amplitude } => amplitude * (1.0 - (r / h0).powi(2)),
            InitialData::Power { amplitude, exponent } => amplitude * (1.0 - (r / h0).powf(*exponent)),
            InitialData::Custom(g) => g(r),
        }
    }

    /// `sup u0`, sampled.
    fn sup(&self, h0: f64) -> f64 {
        (0..=256)
            .map(|k| self.eval(h0 * k as f64 / 257.0, h0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// Forward Euler; monotone under the stability condition.
    Euler,
    /// Heun's second-order predictor–corrector.
    Heun,
}

/// Thresholds of the finite-time spreading/vanishing decision.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    /// Vanishing needs `h` growth below `eps_h_rel·h0` per unit time.
    pub eps_h_rel: f64,
    /// ... and `max u` below `eps_u_rel·u*`.
    pub eps_u_rel: f64,
    /// Window length as a fraction of the elapsed time.
    pub window_frac: f64,
    pub min_records: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps_h_rel: 1e-5,
            eps_u_rel: 1e-3,
            window_frac: 0.1,
            min_records: 20,
        }
    }
}

/// All model and numerical parameters of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: RadialKernel,
    pub d: f64,
    pub mu: f64,
    pub f: Nonlinearity,
    pub h0: f64,
    pub u0: InitialData,
    pub dr: f64,
    /// `None` picks `DEFAULT_CFL/(d + Lip f)`.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Steps between trajectory records.
    pub record_every: usize,
    /// Records between full profile snapshots; 0 disables them.
    pub snapshot_every: usize,
    pub scheme: TimeScheme,
    pub thresholds: Thresholds,
    /// Stop as soon as the verdict is decided.
    pub stop_when_decided: bool,
    /// Negative values above `-tol_neg` are clamped to zero.
    pub tol_neg: f64,
}

impl RunConfig {
    /// Defaults for everything numerical.
    pub fn new(kernel: RadialKernel, d: f64, mu: f64, f: Nonlinearity, h0: f64) -> Self {
        Self {
            kernel,
            d,
            mu,
            f,
            h0,
            u0: InitialData::Parabolic { amplitude: 1.0 },
            dr: 0.05,
            dt: None,
            t_end: 100.0,
            record_every: 10,
            snapshot_every: 0,
            scheme: TimeScheme::Euler,
            thresholds: Thresholds::default(),
            stop_when_decided: false,
            tol_neg: 1e-12,
        }
    }

    /// Upper bound `max(‖u0‖∞, u*)` of the solution.
    pub fn bound(&self) -> f64 {
        self.u0.sup(self.h0).max(self.f.carrying_capacity())
    }

    /// Time step actually used.
    pub fn time_step(&self) -> f64 {
        let rate = self.d + self.f.lipschitz_on(self.bound());
        self.dt.unwrap_or(DEFAULT_CFL / rate)
    }

    pub fn validate(&self) -> Result<()> {
        validate_kernel(&self.kernel)?;
        self.f.validate()?;
        for (name, v) in [("d", self.d), ("mu", self.mu), ("h0", self.h0), ("dr", self.dr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::invalid(format!("t_end = {} must be nonnegative", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record stride must be at least 1"));
        }
        if self.h0 < self.dr {
            return Err(Error::invalid(format!(
                "h0 = {} is smaller than the grid step {}",
                self.h0, self.dr
            )));
        }
        let inside = (0..64).map(|k| self.u0.eval(self.h0 * k as f64 / 64.0, self.h0));
        if inside.clone().any(|v| !(v > 0.0)) {
            return Err(Error::invalid("initial data must be positive inside the initial ball"));
        }
        let rate = self.d + self.f.lipschitz_on(self.bound());
        let dt = self.time_step();
        if !(dt > 0.0) || dt * rate >= STABILITY_LIMIT {
            return Err(Error::invalid(format!(
                "time step {dt} violates dt·(d + Lip f) = {:.3} < {STABILITY_LIMIT}",
                dt * rate
            )));
        }
        Ok(())
    }
}

/// Solution at one time.
#[derive(Debug, Clone, Serialize)]
pub struct SimState {
    pub t: f64,
    pub h: f64,
    /// Values at `r_i = i·dr`, `r_i < h`. The boundary value `u(h) = 0` is
    /// implicit.
    pub u: Vec<f64>,
    pub dr: f64,
}

impl SimState {
    /// Radii of the stored values followed by `h`.
    pub fn nodes(&self) -> Vec<f64> {
        let mut r: Vec<f64> = (0..self.u.len()).map(|i| i as f64 * self.dr).collect();
        r.push(self.h);
        r
    }

    /// Linear interpolant, zero at and beyond `h`.
    pub fn value_at(&self, r: f64) -> f64 {
        if r >= self.h {
            return 0.0;
        }
        let m = self.u.len() - 1;
        let k = ((r / self.dr).floor() as usize).min(m);
        let (r0, u0) = (k as f64 * self.dr, self.u[k]);
        let (r1, u1) = if k < m {
            ((k + 1) as f64 * self.dr, self.u[k + 1])
        } else {
            (self.h, 0.0)
        };
        u0 + (u1 - u0) * (r - r0) / (r1 - r0)
    }
}

/// Scalar observables at one time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Record {
    pub t: f64,
    pub h: f64,
    pub hdot: f64,
    pub u_at_0: f64,
    pub u_max: f64,
    /// `ω_N ∫_0^h u r^{N-1} dr`.
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Spreading,
    Vanishing,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Spreading => "spreading",
            Verdict::Vanishing => "vanishing",
            Verdict::Undecided => "undecided",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub snapshots: Vec<SimState>,
    pub final_state: SimState,
    pub dt: f64,
    pub steps: usize,
    /// Critical radius used for classification, when it exists.
    pub l_star: Option<f64>,
    pub verdict: Verdict,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn fronts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h).collect()
    }
}

/// The stepper: state plus the operator for the current boundary.
pub struct Simulator<'a> {
    cfg: &'a RunConfig,
    op: RadialOperator<'a>,
    state: SimState,
    dt: f64,
    dim: usize,
    ku: Vec<f64>,
    hdot: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a RunConfig, tables: &'a KernelTables) -> Result<Self> {
        cfg.validate()?;
        if tables.kernel().hash64() != cfg.kernel.hash64() || tables.dr() != cfg.dr {
            return Err(Error::invalid("kernel tables do not match the run configuration"));
        }
        let op = RadialOperator::new(tables, cfg.h0);
        let m = op.m();
        let u: Vec<f64> = (0..=m).map(|i| cfg.u0.eval(tables.node(i), cfg.h0)).collect();
        let mut sim = Self {
            cfg,
            op,
            state: SimState {
                t: 0.0,
                h: cfg.h0,
                u,
                dr: cfg.dr,
            },
            dt: cfg.time_step(),
            dim: cfg.kernel.dim(),
            ku: Vec::new(),
            hdot: 0.0,
        };
        sim.hdot = sim.front_speed(&sim.state.u, sim.state.h);
        Ok(sim)
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `h'` at the current state.
    pub fn hdot(&self) -> f64 {
        self.hdot
    }

    /// `μ/h^{N-1} ∫_0^h r^{N-1} u T(r, h) dr`, trapezoid on the nodes and
    /// the partial cell; `op` must be positioned at `h`.
    fn front_speed(&self, u: &[f64], h: f64) -> f64 {
        let m = u.len() - 1;
        let dr = self.cfg.dr;
        let p = self.dim as i32 - 1;
        let mut acc = 0.0;
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            let r = i as f64 * dr;
            let w = if i == 0 {
                0.5 * dr
            } else if i == m {
                0.5 * dr + 0.5 * (h - r)
            } else {
                dr
            };
            let w = if m == 0 { 0.5 * h } else { w };
            acc += w * r.powi(p) * ui * self.op.tail(i);
        }
        self.cfg.mu * acc / h.powi(p)
    }

    /// `d(Ku - u) + f(u)` at the current operator position.
    fn rhs(&mut self, u: &[f64], out: &mut [f64]) {
        let (d, f) = (self.cfg.d, &self.cfg.f);
        self.ku.resize(u.len(), 0.0);
        self.op.apply(u, 0.0, &mut self.ku);
        for ((o, ui), ki) in out.iter_mut().zip(u).zip(&self.ku) {
            *o = d * (ki - ui) + f.eval(*ui);
        }
    }

    fn clamp(&self, u: &mut [f64]) -> Result<()> {
        for (i, v) in u.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v < -self.cfg.tol_neg {
                    return Err(Error::numerical(format!(
                        "negative density {v:e} at r = {} (t = {}); reduce dt",
                        i as f64 * self.cfg.dr,
                        self.state.t
                    )));
                }
                *v = 0.0;
            }
        }
        Ok(())
    }

    /// Moves the boundary to `h_new`, appending crossed lattice nodes.
    fn advance_front(&mut self, mut u: Vec<f64>, h_new: f64) -> Vec<f64> {
        let dr = self.cfg.dr;
        let m_old = u.len() - 1;
        let m_new = last_node(dr, h_new).max(m_old);
        if m_new > m_old {
            let (r0, u0) = (m_old as f64 * dr, u[m_old]);
            for i in m_old + 1..=m_new {
                let r = i as f64 * dr;
                u.push(u0 * (h_new - r) / (h_new - r0));
            }
        }
        self.op.set_h(h_new);
        u
    }

    /// One time step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.dt;
        let n = self.state.u.len();
        let u = std::mem::take(&mut self.state.u);
        let h = self.state.h;
        let mut k1 = vec![0.0; n];
        self.rhs(&u, &mut k1);
        let hd1 = self.hdot;
        let mut next: Vec<f64> = u.iter().zip(&k1).map(|(a, k)| a + dt * k).collect();
        let mut h_next = h + dt * hd1;
        if self.cfg.scheme == TimeScheme::Heun && last_node(self.cfg.dr, h_next) == n - 1 {
            let mut pred = next.clone();
            self.clamp(&mut pred)?;
            self.op.set_h(h_next);
            let mut k2 = vec![0.0; n];
            self.rhs(&pred, &mut k2);
            let hd2 = self.front_speed(&pred, h_next);
            for (i, v) in next.iter_mut().enumerate() {
                *v = u[i] + 0.5 * dt * (k1[i] + k2[i]);
            }
            h_next = h + 0.5 * dt * (hd1 + hd2);
        }
        self.clamp(&mut next)?;
        let next = self.advance_front(next, h_next);
        self.hdot = self.front_speed(&next, h_next);
        self.state = SimState {
            t: self.state.t + dt,
            h: h_next,
            u: next,
            dr: self.cfg.dr,
        };
        Ok(())
    }

    pub fn record(&self) -> Record {
        let s = &self.state;
        let m = s.u.len() - 1;
        let dr = self.cfg.dr;
        let p = self.dim as i32 - 1;
        let mut mass = 0.0;
        for (i, ui) in s.u.iter().enumerate() {
            let r = i as f64 * dr;
            let w = if i == 0 {
                0.5 * dr
            } else if i == m {
                0.5 * dr + 0.5 * (s.h - r)
            } else {
                dr
            };
            let w = if m == 0 { 0.5 * s.h } else { w };
            mass += w * r.powi(p) * ui;
        }
        Record {
            t: s.t,
            h: s.h,
            hdot: self.hdot,
            u_at_0: s.u[0],
            u_max: s.u.iter().cloned().fold(0.0, f64::max),
            mass: sphere_area(self.dim) * mass,
        }
    }
}

/// Critical radius `L★` for the run's kernel and `f'(0)`, if it exists.
pub fn critical_radius(cfg: &RunConfig, tables: &KernelTables) -> Result<Option<f64>> {
    let a = cfg.f.growth_rate();
    if a >= cfg.d {
        return Ok(None);
    }
    let tol = (1e-4 * cfg.dr).max(1e-7);
    Ok(Some(find_l_star(cfg.d, a, tables, tol, 1e4)?.l_star))
}

/// Finite-time spreading/vanishing decision.
///
/// Spreading once `f'(0) ≥ d` or `h` has reached `L★` (then `λ₁(h) ≥ 0`).
/// Vanishing when over the last `window_frac` of the elapsed time `h` grew
/// slower than `eps_h_rel·h0` per unit time while `max u` fell below
/// `eps_u_rel·u*` and kept decreasing.
pub fn classify(records: &[Record], cfg: &RunConfig, l_star: Option<f64>) -> Verdict {
    if cfg.f.growth_rate() >= cfg.d {
        return Verdict::Spreading;
    }
    if let (Some(ls), Some(last)) = (l_star, records.last()) {
        if last.h >= ls {
            return Verdict::Spreading;
        }
    }
    let th = &cfg.thresholds;
    if records.len() < th.min_records {
        return Verdict::Undecided;
    }
    let last = records[records.len() - 1];
    let start_t = last.t - th.window_frac * last.t;
    let first = match records.iter().find(|r| r.t >= start_t) {
        Some(r) if r.t < last.t => *r,
        _ => return Verdict::Undecided,
    };
    let growth = (last.h - first.h) / (last.t - first.t);
    let u_star = cfg.f.carrying_capacity();
    if growth < th.eps_h_rel * cfg.h0 && last.u_max < th.eps_u_rel * u_star && last.u_max < first.u_max {
        Verdict::Vanishing
    } else {
        Verdict::Undecided
    }
}

/// Runs `cfg` on shared tables.
pub fn run_with_tables(cfg: &RunConfig, tables: &KernelTables) -> Result<Trajectory> {
    let mut sim = Simulator::new(cfg, tables)?;
    let l_star = critical_radius(cfg, tables)?;
    let dt = sim.dt();
    let steps_total = (cfg.t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut records = vec![sim.record()];
    let mut snapshots = Vec::new();
    if cfg.snapshot_every > 0 {
        snapshots.push(sim.state().clone());
    }
    let mut verdict = classify(&records, cfg, l_star);
    let mut steps = 0;
    while steps < steps_total {
        if cfg.stop_when_decided && verdict != Verdict::Undecided {
            break;
        }
        sim.step()?;
        steps += 1;
        if steps % cfg.record_every == 0 || steps == steps_total {
            records.push(sim.record());
            if cfg.snapshot_every > 0 && (records.len() - 1) % cfg.snapshot_every == 0 {
                snapshots.push(sim.state().clone());
            }
            verdict = classify(&records, cfg, l_star);
        }
    }
    Ok(Trajectory {
        records,
        snapshots,
        final_state: sim.state().clone(),
        dt,
        steps,
        l_star,
        verdict,
    })
}

/// Runs `cfg`, building kernel tables (from `cache_dir` when given).
pub fn run(cfg: &RunConfig, cache_dir: Option<&std::path::Path>) -> Result<Trajectory> {
    let tables = match cache_dir {
        Some(dir) => KernelTables::open_cached(cfg.kernel.clone(), cfg.dr, dir)?,
        None => KernelTables::new(cfg.kernel.clone(), cfg.dr)?,
    };
    let traj = run_with_tables(cfg, &tables)?;
    if let Some(dir) = cache_dir {
        if let Err(e) = tables.persist(dir) {
            log::warn!("could not write kernel table cache: {e}");
        }
    }
    Ok(traj)
}

/// One step of the threshold search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuProbe {
    pub mu: f64,
    pub verdict: Verdict,
    pub t_end: f64,
    pub h_final: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuStar {
    /// Vanishing at `bracket.0`, spreading at `bracket.1`.
    pub bracket: (f64, f64),
    pub history: Vec<MuProbe>,
    pub converged: bool,
    pub warning: Option<String>,
}

impl MuStar {
    /// Geometric midpoint of the bracket.
    pub fn estimate(&self) -> f64 {
        (self.bracket.0 * self.bracket.1).sqrt()
    }

    /// True when no probe shows spreading below a vanishing probe.
    pub fn history_is_monotone(&self) -> bool {
        self.history.iter().all(|a| {
            a.verdict != Verdict::Spreading
                || self
                    .history
                    .iter()
                    .all(|b| !(b.mu > a.mu && b.verdict == Verdict::Vanishing))
        })
    }
}

/// Options of [`find_mu_star`].
#[derive(Debug, Clone, Copy)]
pub struct MuSearch {
    pub bracket: (f64, f64),
    /// Stop when `μ_hi/μ_lo < 1 + tol_mu`.
    pub tol_mu: f64,
    /// Longest run tried before a probe counts as undecided.
    pub t_max: f64,
}

/// Bisection (in `ln μ`) for the expansion threshold `μ★`.
pub fn find_mu_star(template: &RunConfig, tables: &KernelTables, search: &MuSearch) -> Result<MuStar> {
    let a = template.f.growth_rate();
    if a >= template.d {
        return Err(Error::invalid(format!(
            "f'(0) = {a} >= d = {}: spreading happens for every mu, no threshold exists",
            template.d
        )));
    }
    let l_star = critical_radius(template, tables)?.unwrap_or(f64::INFINITY);
    if template.h0 >= l_star {
        return Err(Error::invalid(format!(
            "h0 = {} >= L* = {l_star}: spreading happens for every mu",
            template.h0
        )));
    }
    let (mut lo, mut hi) = search.bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid(format!("mu bracket [{lo}, {hi}] is not increasing and positive")));
    }
    let mut history = Vec::new();
    let mut probe = |mu: f64| -> Result<MuProbe> {
        let mut cfg = template.clone();
        cfg.mu = mu;
        cfg.stop_when_decided = true;
        let mut t_end = template.t_end.min(search.t_max);
        loop {
            cfg.t_end = t_end;
            let traj = run_with_tables(&cfg, tables)?;
            let p = MuProbe {
                mu,
                verdict: traj.verdict,
                t_end,
                h_final: traj.final_state.h,
            };
            if p.verdict != Verdict::Undecided || t_end >= search.t_max {
                log::debug!("mu = {mu}: {} at t = {t_end}", p.verdict);
                history.push(p);
                return Ok(p);
            }
            t_end = (2.0 * t_end).min(search.t_max);
        }
    };
    let p_lo = probe(lo)?;
    let p_hi = probe(hi)?;
    if p_lo.verdict != Verdict::Vanishing || p_hi.verdict != Verdict::Spreading {
        return Ok(MuStar {
            bracket: (lo, hi),
            history,
            converged: false,
            warning: Some(format!(
                "bracket endpoints not resolved: {} at mu = {lo}, {} at mu = {hi}",
                p_lo.verdict, p_hi.verdict
            )),
        });
    }
    let mut warning = None;
    while hi / lo >= 1.0 + search.tol_mu {
        let mid = (lo * hi).sqrt();
        match probe(mid)?.verdict {
            Verdict::Vanishing => lo = mid,
            Verdict::Spreading => hi = mid,
            Verdict::Undecided => {
                warning = Some(format!(
                    "undecided at mu = {mid} up to t = {}; returning the widest resolved bracket",
                    search.t_max
                ));
                break;
            }
        }
    }
    Ok(MuStar {
        bracket: (lo, hi),
        converged: warning.is_none(),
        history,
        warning,
    })
}

/// Linear-speed estimate on the tail half of a trajectory, if long enough.
pub fn speed_estimate(traj: &Trajectory) -> Option<f64> {
    estimate_speed(&traj.times(), &traj.fronts(), FitWindow::default())
        .ok()
        .map(|f| f.coefficient)
}
