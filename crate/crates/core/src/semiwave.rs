//! Semi-waves: the half-line travelling profiles that fix the spreading speed.
//!
//! For an even kernel `P` on `ℝ` we look for `(c, φ)` with
//!
//! ```text
//! d ∫_{-∞}^0 P(x - y) φ(y) dy - d φ + c φ' + f(φ) = 0,   x < 0,
//! φ(0) = 0,  φ(-∞) = û*,   c = μ ∫_{-∞}^0 ∫_0^∞ P(x - y) φ(x) dy dx.
//! ```
//!
//! For fixed `c` the profile is a fixed point of "freeze the convolution,
//! march the first-order equation leftward from `x = 0`". The speed is the
//! root of `g(c) = c - c_map(c)`, which is negative near 0 and nonnegative at
//! `c_hi = μ û* ∫_0^∞ y P(y) dy`.
//!
//! The convolution is a dense Toeplitz product (`O(n·band)`); an FFT would
//! make the fat-tail case `O(n log n)` if larger windows are ever needed.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::RadialKernel;
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::{integrate_to_infinity, rule, GaussLegendre};

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const CELL_ORDER: usize = 16;
const PANEL_ORDER: usize = 48;

/// An even, nonnegative kernel on the line.
#[derive(Clone)]
pub struct Kernel1d {
    label: String,
    f: KernelFn,
    support: Option<f64>,
    /// `P(x) ~ |x|^{-decay}` for fat tails.
    decay: Option<f64>,
    scale: f64,
    kinks: Vec<f64>,
}

impl fmt::Debug for Kernel1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel1d")
            .field("label", &self.label)
            .field("support", &self.support)
            .field("decay", &self.decay)
            .finish()
    }
}

impl Kernel1d {
    /// The planar marginal `J★` of a radial kernel.
    pub fn j_star(k: &RadialKernel) -> Self {
        let kk = k.clone();
        Self {
            label: format!("jstar[{}]", k.label()),
            f: Arc::new(move |x| kk.j_star(x.abs())),
            support: k.support(),
            decay: k.tail_exponent().map(|b| b - k.dim() as f64 + 1.0),
            scale: k.length_scale(),
            kinks: k.kinks().to_vec(),
        }
    }

    /// A kernel given by `f(|x|)`. Exactly one of `support` and `decay`
    /// describes the far field; `kinks` lists points where `f` is not smooth.
    pub fn custom<F>(
        label: impl Into<String>,
        f: F,
        support: Option<f64>,
        decay: Option<f64>,
        kinks: Vec<f64>,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if support.is_some() == decay.is_some() {
            return Err(Error::invalid(
                "a line kernel needs exactly one of a support radius or a tail exponent",
            ));
        }
        if let Some(p) = decay {
            if !(p > 1.0) {
                return Err(Error::invalid(format!("tail exponent {p} must exceed 1")));
            }
        }
        if !(f(0.0) > 0.0) {
            return Err(Error::invalid("line kernel must be positive at the origin"));
        }
        let mut kinks: Vec<f64> = kinks.into_iter().filter(|k| *k > 0.0).collect();
        if let Some(s) = support {
            kinks.retain(|k| *k < s);
            kinks.push(s);
        }
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        let scale = support.or_else(|| kinks.last().copied()).unwrap_or(1.0);
        Ok(Self {
            label: label.into(),
            f: Arc::new(f),
            support,
            decay,
            scale,
            kinks,
        })
    }

    /// `P · 1_{|x| ≤ cut}`.
    pub fn truncated(&self, cut: f64) -> Self {
        let f = Arc::clone(&self.f);
        let support = self.support.map_or(cut, |s| s.min(cut));
        let mut kinks: Vec<f64> = self.kinks.iter().copied().filter(|k| *k < support).collect();
        kinks.push(support);
        Self {
            label: format!("{}|{}", self.label, cut),
            f: Arc::new(move |x| if x.abs() <= cut { f(x) } else { 0.0 }),
            support: Some(support),
            decay: None,
            scale: self.scale.min(support),
            kinks,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn support(&self) -> Option<f64> {
        self.support
    }

    pub fn decay(&self) -> Option<f64> {
        self.decay
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x.abs())
    }

    /// Breakpoints of `[a, b]` at the kernel's kinks.
    fn breaks(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts = vec![a];
        pts.extend(self.kinks.iter().copied().filter(|k| *k > a && *k < b));
        pts.push(b);
        pts
    }

    /// `∫_z^∞ g(y) P(y) dy` for `z ≥ 0`, where `g` grows at most like
    /// `y^growth`.
    fn integrate_from<G: Fn(f64) -> f64>(&self, z: f64, growth: f64, g: G) -> f64 {
        let gl = rule(PANEL_ORDER);
        let h = |y: f64| g(y) * self.eval(y);
        match self.support {
            Some(s) => {
                if z >= s {
                    return 0.0;
                }
                self.breaks(z, s)
                    .windows(2)
                    .map(|w| gl.integrate_graded(w[0], w[1], &h))
                    .sum()
            }
            None => {
                let decay = self.decay.unwrap_or(f64::INFINITY) - growth;
                let last = self.kinks.last().copied().unwrap_or(0.0).max(z);
                let near: f64 = self
                    .breaks(z, last)
                    .windows(2)
                    .filter(|w| w[1] > w[0])
                    .map(|w| gl.integrate_graded(w[0], w[1], &h))
                    .sum();
                near + integrate_to_infinity(&gl, last, self.scale, decay, h)
            }
        }
    }

    /// `‖P‖_{L¹(ℝ)}`.
    pub fn mass(&self) -> f64 {
        2.0 * self.tail_mass(0.0)
    }

    /// `∫_z^∞ P(y) dy`.
    pub fn tail_mass(&self, z: f64) -> f64 {
        self.integrate_from(z, 0.0, |_| 1.0)
    }

    /// `∫_z^∞ (y - z) P(y) dy`, infinite when the first moment diverges.
    pub fn tail_first(&self, z: f64) -> f64 {
        if !self.has_first_moment() {
            return f64::INFINITY;
        }
        self.integrate_from(z, 1.0, |y| y - z)
    }

    pub fn has_first_moment(&self) -> bool {
        self.decay.is_none_or(|p| p > 2.0)
    }

    /// `∫_0^∞ y P(y) dy`, `None` when divergent.
    pub fn first_moment(&self) -> Option<f64> {
        self.has_first_moment().then(|| self.tail_first(0.0))
    }

    /// `(∫_a^b P, ∫_a^b P (y - a)/(b - a))` for `0 ≤ a < b`.
    fn cell(&self, a: f64, b: f64, gl: &GaussLegendre) -> (f64, f64) {
        if let Some(s) = self.support {
            if a >= s {
                return (0.0, 0.0);
            }
        }
        let (mut m0, mut m1) = (0.0, 0.0);
        for w in self.breaks(a, b).windows(2) {
            gl.for_each_graded(w[0], w[1], |y, wt| {
                let v = wt * self.eval(y);
                m0 += v;
                m1 += v * (y - a) / (b - a);
            });
        }
        (m0, m1)
    }
}

#[derive(Debug, Clone)]
pub struct SemiWaveProblem {
    pub kernel: Kernel1d,
    pub d: f64,
    pub mu: f64,
    pub f: Nonlinearity,
}

#[derive(Debug, Clone, Copy)]
pub struct SemiWaveOptions {
    /// Grid step; defaults to `min(0.02, scale/50)`.
    pub dx: Option<f64>,
    /// Initial window length `M`; defaults to `20·scale`.
    pub truncation: Option<f64>,
    pub max_truncation: f64,
    /// Required `û* - φ(-M)`.
    pub tol_tail: f64,
    pub tol_picard: f64,
    pub tol_speed: f64,
    pub damping: f64,
    pub max_picard: usize,
}

impl Default for SemiWaveOptions {
    fn default() -> Self {
        Self {
            dx: None,
            truncation: None,
            max_truncation: 400.0,
            tol_tail: 1e-8,
            tol_picard: 1e-12,
            tol_speed: 1e-10,
            damping: 0.5,
            max_picard: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SemiWaveSolution {
    pub c0: f64,
    /// Grid `x_0 = -M < … < x_n = 0`.
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub u_star_hat: f64,
    /// Sup of the cell residual of the profile equation.
    pub residual_pde: f64,
    /// `|c0 - c_map(c0)|`.
    pub residual_speed: f64,
    pub bracket: (f64, f64),
    pub truncation: f64,
    pub dx: f64,
    /// `û* - φ(-M)`.
    pub tail_gap: f64,
    pub picard_iterations: usize,
}

impl SemiWaveSolution {
    /// Profile at `x ≤ 0` by linear interpolation, `û*` left of the window.
    pub fn phi_at(&self, x: f64) -> f64 {
        let dx = self.dx;
        let s = -x;
        let n = self.phi.len() - 1;
        if s <= 0.0 {
            return 0.0;
        }
        let k = (s / dx).floor() as usize;
        if k >= n {
            return self.u_star_hat;
        }
        let t = s / dx - k as f64;
        // phi is stored in x order, so index n - k is x = -k dx.
        (1.0 - t) * self.phi[n - k] + t * self.phi[n - k - 1]
    }
}

/// Discretized problem on `s = -x ∈ [0, M]`, nodes `s_i = i·dx`.
struct Discrete<'a> {
    p: &'a SemiWaveProblem,
    n: usize,
    dx: f64,
    u_star: f64,
    /// `lag[δ + off]`: weight of node `i + δ` in row `i`, interior nodes.
    lag: Vec<f64>,
    off: usize,
    /// Corrections for the first and last node (one adjacent cell only).
    first_only_left: Vec<f64>,
    last_only_right: Vec<f64>,
    /// `Q(k dx) = ∫_{k dx}^∞ P` for `k = 0..=n`.
    q_nodes: Vec<f64>,
    /// `∫_M^∞ (y - M) P(y) dy`.
    tail_first_m: f64,
}

impl<'a> Discrete<'a> {
    fn new(p: &'a SemiWaveProblem, dx: f64, m: f64, u_star: f64) -> Self {
        let n = (m / dx).round().max(2.0) as usize;
        let kern = &p.kernel;
        let band = match kern.support() {
            Some(s) => ((s / dx).ceil() as usize).min(n),
            None => n,
        };
        let gl = rule(CELL_ORDER);
        let cells: Vec<(f64, f64)> = (0..band)
            .map(|j| kern.cell(j as f64 * dx, (j + 1) as f64 * dx, &gl))
            .collect();
        // Cell [k, k+1]·dx relative to node i: moments against P(y - s_i).
        let b = |k: i64| -> (f64, f64) {
            if k >= 0 {
                cells.get(k as usize).copied().unwrap_or((0.0, 0.0))
            } else {
                let j = (-k - 1) as usize;
                cells.get(j).map(|(m0, m1)| (*m0, m0 - m1)).unwrap_or((0.0, 0.0))
            }
        };
        let left = |k: i64| {
            let (m0, m1) = b(k);
            m0 - m1
        };
        let right = |k: i64| b(k).1;
        let off = band + 1;
        let lag: Vec<f64> = (0..=2 * off)
            .map(|t| {
                let delta = t as i64 - off as i64;
                left(delta) + right(delta - 1)
            })
            .collect();
        let first_only_left = (0..=n.min(off))
            .map(|i| left(-(i as i64)))
            .collect();
        let last_only_right = (0..=n.min(off))
            .map(|back| right(back as i64 - 1))
            .collect();
        let mut q_nodes = vec![0.0; n + 1];
        q_nodes[n] = kern.tail_mass(n as f64 * dx);
        for k in (0..n).rev() {
            q_nodes[k] = q_nodes[k + 1] + cells.get(k).map_or(0.0, |c| c.0);
        }
        let tail_first_m = kern.tail_first(n as f64 * dx);
        Self {
            p,
            n,
            dx,
            u_star,
            lag,
            off,
            first_only_left,
            last_only_right,
            q_nodes,
            tail_first_m,
        }
    }

    /// `C_i = d ∫_0^∞ P(s - s_i) ψ(s) ds`, with `ψ = û*` beyond `M`.
    fn convolve(&self, psi: &[f64], out: &mut [f64]) {
        let n = self.n;
        let off = self.off as i64;
        for (i, o) in out.iter_mut().enumerate() {
            let lo = (i as i64 - off).max(0) as usize;
            let hi = ((i as i64 + off) as usize).min(n);
            let mut acc = 0.0;
            for j in lo..=hi {
                let w = if j == 0 {
                    self.first_only_left.get(i).copied().unwrap_or(0.0)
                } else if j == n {
                    self.last_only_right.get(n - i).copied().unwrap_or(0.0)
                } else {
                    self.lag[(j as i64 - i as i64 + off) as usize]
                };
                acc += w * psi[j];
            }
            *o = self.p.d * (acc + self.u_star * self.q_nodes[n - i]);
        }
    }

    /// March `c ψ' = C - d ψ + f(ψ)` from `ψ(0) = 0` with the implicit
    /// trapezoid rule.
    fn march(&self, c: f64, conv: &[f64], psi: &mut [f64]) {
        let (d, dx, f) = (self.p.d, self.dx, &self.p.f);
        let alpha = c / dx + 0.5 * d;
        psi[0] = 0.0;
        for i in 0..self.n {
            let y0 = psi[i];
            let h = conv[i] - d * y0 + f.eval(y0);
            let rhs = c * y0 / dx + 0.5 * h + 0.5 * conv[i + 1];
            psi[i + 1] = solve_scalar(alpha, f, rhs, y0 + dx * h / c, self.u_star);
        }
    }

    /// `c_map = μ ∫_0^M ψ(s) Q(s) ds + μ û* ∫_M^∞ (y - M) P(y) dy`.
    fn c_map(&self, psi: &[f64]) -> f64 {
        let q = &self.q_nodes;
        let mut acc = 0.0;
        for i in 0..self.n {
            let (a, b) = (psi[i], psi[i + 1]);
            let (qa, qb) = (q[i], q[i + 1]);
            acc += (2.0 * a * qa + a * qb + b * qa + 2.0 * b * qb) / 6.0;
        }
        self.p.mu * (acc * self.dx + self.u_star * self.tail_first_m)
    }

    /// Fixed profile for speed `c`, starting from `psi`.
    fn profile(&self, c: f64, psi: &mut [f64], opts: &SemiWaveOptions) -> Result<usize> {
        let mut conv = vec![0.0; self.n + 1];
        let mut next = vec![0.0; self.n + 1];
        for it in 1..=opts.max_picard {
            self.convolve(psi, &mut conv);
            self.march(c, &conv, &mut next);
            let mut diff = 0.0_f64;
            for (p, q) in psi.iter_mut().zip(&next) {
                diff = diff.max((q - *p).abs());
                *p += opts.damping * (q - *p);
            }
            if diff < opts.tol_picard {
                return Ok(it);
            }
        }
        Err(Error::numerical(format!(
            "semi-wave profile iteration at c = {c} did not settle in {} sweeps",
            opts.max_picard
        )))
    }

    /// Cell residual of the fully coupled discrete equation.
    fn residual(&self, c: f64, psi: &[f64]) -> f64 {
        let (d, f) = (self.p.d, &self.p.f);
        let mut conv = vec![0.0; self.n + 1];
        self.convolve(psi, &mut conv);
        let h: Vec<f64> = (0..=self.n)
            .map(|i| conv[i] - d * psi[i] + f.eval(psi[i]))
            .collect();
        (0..self.n)
            .map(|i| (c * (psi[i + 1] - psi[i]) / self.dx - 0.5 * (h[i] + h[i + 1])).abs())
            .fold(0.0, f64::max)
    }
}

/// Root of `α y - f(y)/2 = rhs` near `guess`, safeguarded by bisection.
fn solve_scalar(alpha: f64, f: &Nonlinearity, rhs: f64, guess: f64, scale: f64) -> f64 {
    let g = |y: f64| alpha * y - 0.5 * f.eval(y) - rhs;
    let mut lo = 0.0;
    let mut hi = (2.0 * scale).max(guess);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    if g(lo) >= 0.0 {
        return lo;
    }
    let mut y = guess.clamp(lo, hi);
    for _ in 0..100 {
        let gy = g(y);
        if gy.abs() <= 1e-15 * (1.0 + rhs.abs()) {
            return y;
        }
        if gy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let slope = alpha - 0.5 * f.derivative(y);
        let mut next = y - gy / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-16 * y.abs().max(1e-300) {
            return next;
        }
        y = next;
    }
    y
}

fn check_problem(p: &SemiWaveProblem) -> Result<f64> {
    p.f.validate()?;
    if !(p.d > 0.0 && p.mu > 0.0) {
        return Err(Error::invalid(format!(
            "d = {} and mu = {} must be positive",
            p.d, p.mu
        )));
    }
    if !(p.kernel.eval(0.0) > 0.0) {
        return Err(Error::invalid("line kernel must be positive at the origin"));
    }
    if !p.kernel.has_first_moment() {
        let decay = p.kernel.decay().unwrap_or(f64::NAN);
        return Err(Error::invalid(format!(
            "semi-wave not solvable: the kernel's first moment diverges (tail exponent {decay} <= 2)"
        )));
    }
    let shift = p.d * (p.kernel.mass() - 1.0);
    p.f.shifted_root(shift)
}

struct Evaluation {
    g: f64,
    psi: Vec<f64>,
    sweeps: usize,
}

fn evaluate(disc: &Discrete<'_>, c: f64, opts: &SemiWaveOptions) -> Result<Evaluation> {
    let mut psi = vec![disc.u_star; disc.n + 1];
    psi[0] = 0.0;
    let sweeps = disc.profile(c, &mut psi, opts)?;
    Ok(Evaluation {
        g: c - disc.c_map(&psi),
        psi,
        sweeps,
    })
}

/// Bracketed Illinois iteration on `g(c) = c - c_map(c)`.
fn find_speed(
    disc: &Discrete<'_>,
    c_hi: f64,
    opts: &SemiWaveOptions,
) -> Result<(f64, (f64, f64), Evaluation, usize)> {
    let mut sweeps = 0;
    let mut hi = c_hi;
    let mut e_hi = evaluate(disc, hi, opts)?;
    sweeps += e_hi.sweeps;
    if e_hi.g < 0.0 {
        return Err(Error::numerical(format!(
            "speed bracket not found: g(c_hi = {c_hi}) = {:e} < 0",
            e_hi.g
        )));
    }
    let mut lo = 0.5 * c_hi;
    let mut e_lo = evaluate(disc, lo, opts)?;
    sweeps += e_lo.sweeps;
    while e_lo.g >= 0.0 {
        hi = lo;
        e_hi = e_lo;
        lo *= 0.5;
        if lo < 1e-8 * c_hi {
            return Err(Error::numerical(format!(
                "speed bracket not found: g stays nonnegative down to c = {lo:e}"
            )));
        }
        e_lo = evaluate(disc, lo, opts)?;
        sweeps += e_lo.sweeps;
    }
    let (mut g_lo, mut g_hi) = (e_lo.g, e_hi.g);
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= opts.tol_speed * hi {
            break;
        }
        let mut c = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        if !(c > lo && c < hi) {
            c = 0.5 * (lo + hi);
        }
        let e = evaluate(disc, c, opts)?;
        sweeps += e.sweeps;
        if e.g == 0.0 {
            return Ok((c, (c, c), e, sweeps));
        }
        if e.g < 0.0 {
            lo = c;
            g_lo = e.g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = c;
            g_hi = e.g;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    let c = if g_hi.abs() < g_lo.abs() { hi } else { lo };
    let e = evaluate(disc, c, opts)?;
    sweeps += e.sweeps;
    Ok((c, (lo, hi), e, sweeps))
}

/// Speed `c0` and profile `φ0` of the semi-wave.
pub fn solve_semiwave(p: &SemiWaveProblem, opts: &SemiWaveOptions) -> Result<SemiWaveSolution> {
    let u_star = check_problem(p)?;
    let scale = p.kernel.scale;
    let dx = opts.dx.unwrap_or((scale / 50.0).min(0.02));
    if !(dx > 0.0) {
        return Err(Error::invalid(format!("grid step dx = {dx} must be positive")));
    }
    let moment = p.kernel.first_moment().unwrap_or(f64::INFINITY);
    let c_hi = p.mu * u_star * moment;
    let mut m = opts.truncation.unwrap_or(20.0 * scale).max(4.0 * dx);
    let mut trimmed = false;
    loop {
        let disc = Discrete::new(p, dx, m, u_star);
        let (c0, bracket, eval, sweeps) = find_speed(&disc, c_hi, opts)?;
        let tail_gap = u_star - eval.psi[disc.n];
        let grow = m * 1.5;
        if tail_gap.abs() >= opts.tol_tail && grow <= opts.max_truncation {
            log::debug!("semi-wave window {m} leaves tail gap {tail_gap:e}; widening");
            m = grow;
            continue;
        }
        // A window far longer than needed leaves a flat stretch where φ
        // equals û* to rounding; cut it back to where the gap is tol/10.
        if !trimmed && tail_gap.abs() < 1e-3 * opts.tol_tail {
            if let Some(k) = eval.psi.iter().position(|v| u_star - v < 0.1 * opts.tol_tail) {
                trimmed = true;
                m = (k as f64 * dx).max(4.0 * dx);
                continue;
            }
        }
        if tail_gap.abs() >= opts.tol_tail {
            log::warn!(
                "semi-wave tail gap {tail_gap:e} exceeds {:e} at the largest window {m}",
                opts.tol_tail
            );
        }
        let psi = eval.psi;
        if psi.windows(2).any(|w| w[1] <= w[0]) {
            let at = psi.windows(2).position(|w| w[1] <= w[0]).unwrap_or(0);
            if u_star - psi[at] > 10.0 * opts.tol_tail.max(opts.tol_picard) {
                return Err(Error::numerical(format!(
                    "semi-wave profile is not monotone near x = {}; refine the grid",
                    -(at as f64) * dx
                )));
            }
        }
        let residual_pde = disc.residual(c0, &psi);
        let residual_speed = (c0 - disc.c_map(&psi)).abs();
        let n = disc.n;
        let x: Vec<f64> = (0..=n).map(|k| -((n - k) as f64) * dx).collect();
        let phi: Vec<f64> = psi.iter().rev().copied().collect();
        return Ok(SemiWaveSolution {
            c0,
            x,
            phi,
            u_star_hat: u_star,
            residual_pde,
            residual_speed,
            bracket,
            truncation: n as f64 * dx,
            dx,
            tail_gap,
            picard_iterations: sweeps,
        });
    }
}

/// Profile `φ_c` on `[-M, 0]` for a prescribed speed `c`, without the
/// speed condition. Returns `(x, φ)` in increasing `x`.
pub fn profile_at_speed(
    p: &SemiWaveProblem,
    c: f64,
    truncation: f64,
    opts: &SemiWaveOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let u_star = check_problem(p)?;
    if !(c > 0.0) {
        return Err(Error::invalid(format!("speed c = {c} must be positive")));
    }
    let dx = opts.dx.unwrap_or((p.kernel.scale / 50.0).min(0.02));
    let disc = Discrete::new(p, dx, truncation, u_star);
    let e = evaluate(&disc, c, opts)?;
    let n = disc.n;
    let x = (0..=n).map(|k| -((n - k) as f64) * dx).collect();
    Ok((x, e.psi.into_iter().rev().collect()))
}

/// Spreading speed for a radial kernel: the semi-wave speed of `J★`, or the
/// infinite-speed verdict when the kernel's `N`-th moment diverges.
pub fn speed_from_kernel(
    k: &RadialKernel,
    d: f64,
    mu: f64,
    f: &Nonlinearity,
    opts: &SemiWaveOptions,
) -> Result<SemiWaveSolution> {
    if !k.has_finite_nth_moment() {
        return Err(Error::InfiniteSpeed {
            beta: k.tail_exponent().unwrap_or(f64::NAN),
            limit: k.dim() as f64 + 1.0,
        });
    }
    let p = SemiWaveProblem {
        kernel: Kernel1d::j_star(k),
        d,
        mu,
        f: f.clone(),
    };
    solve_semiwave(&p, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_problem() -> SemiWaveProblem {
        let k = RadialKernel::uniform(2, 1.0).unwrap();
        SemiWaveProblem {
            kernel: Kernel1d::j_star(&k),
            d: 1.0,
            mu: 1.0,
            f: Nonlinearity::logistic(1.0),
        }
    }

    fn coarse() -> SemiWaveOptions {
        SemiWaveOptions {
            dx: Some(0.05),
            ..Default::default()
        }
    }

    #[test]
    fn line_kernel_moments() {
        let p = disc_problem();
        assert!((p.kernel.mass() - 1.0).abs() < 1e-9);
        let m1 = p.kernel.first_moment().unwrap();
        assert!((m1 - 2.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-9);
        let tri = Kernel1d::custom("tri", |x| (1.0 - x).max(0.0), Some(1.0), None, vec![]).unwrap();
        assert!((tri.tail_mass(0.5) - 0.125).abs() < 1e-12);
        assert!((tri.tail_first(0.0) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn disc_semiwave_is_consistent() {
        let s = solve_semiwave(&disc_problem(), &coarse()).unwrap();
        assert!(s.c0 > 0.0);
        assert!((s.u_star_hat - 1.0).abs() < 1e-12);
        assert!(s.residual_pde < 1e-6, "{}", s.residual_pde);
        assert!(s.residual_speed < 1e-6, "{}", s.residual_speed);
        assert!(s.tail_gap < 1e-8);
        assert!(s.phi.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*s.phi.last().unwrap(), 0.0);
        assert!(s.phi.iter().all(|v| *v >= 0.0 && *v <= s.u_star_hat));
    }

    #[test]
    fn disc_speed_regression_and_refinement() {
        // Frozen from this solver: dx = 0.02 production value, and the
        // Richardson limit of dx = 0.005, 0.0025 (second-order convergence).
        const C0_DX002: f64 = 0.107_532_788_5;
        const C0_LIMIT: f64 = 0.107_573_43;
        let p = disc_problem();
        let s = solve_semiwave(&p, &SemiWaveOptions::default()).unwrap();
        assert!((s.c0 - C0_DX002).abs() < 1e-9, "{}", s.c0);
        assert!((s.c0 - C0_LIMIT).abs() / C0_LIMIT < 1e-3);
        let fine = solve_semiwave(
            &p,
            &SemiWaveOptions {
                dx: Some(0.01),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fine.c0 - s.c0).abs() / fine.c0 < 0.005);
    }

    #[test]
    fn profile_tail_is_exponential() {
        let s = solve_semiwave(&disc_problem(), &SemiWaveOptions::default()).unwrap();
        let n = s.x.len();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n / 4)
            .map(|i| (s.x[i], (s.u_star_hat - s.phi[i]).ln()))
            .unzip();
        let (slope, _, r2) = crate::analysis::linear_regression(&xs, &ys);
        assert!(slope > 0.0 && r2 > 0.99, "slope {slope} r2 {r2}");
    }

    fn bumped(base: &Kernel1d, eps: f64, centre: f64, width: f64) -> Kernel1d {
        let p1 = base.clone();
        let bump = move |x: f64| {
            let z = (x - centre) / width;
            if z.abs() < 1.0 {
                eps * (1.0 - z * z)
            } else {
                0.0
            }
        };
        let support = (centre + width).max(base.support().unwrap());
        let kinks = vec![1.0, (centre - width).abs(), centre + width];
        Kernel1d::custom("bumped", move |x| p1.eval(x) + bump(x), Some(support), None, kinks).unwrap()
    }

    #[test]
    fn ordered_kernels_give_ordered_speeds_and_profiles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let base = disc_problem();
        let opts = coarse();
        let s1 = solve_semiwave(&base, &opts).unwrap();
        for _ in 0..5 {
            let p2 = bumped(
                &base.kernel,
                rng.gen_range(0.01..0.08),
                rng.gen_range(0.0..1.5),
                rng.gen_range(0.2..0.6),
            );
            let upper = SemiWaveProblem { kernel: p2, ..base.clone() };
            let s2 = solve_semiwave(&upper, &opts).unwrap();
            assert!(s1.c0 <= s2.c0, "{} > {}", s1.c0, s2.c0);
            // At a common speed the larger kernel lifts the whole profile.
            for c in [0.5 * s1.c0, s1.c0, s2.c0] {
                let (_, lo) = profile_at_speed(&base, c, 10.0, &opts).unwrap();
                let (_, hi) = profile_at_speed(&upper, c, 10.0, &opts).unwrap();
                assert!(lo.iter().zip(&hi).all(|(a, b)| *a <= b + 1e-12));
            }
        }
    }

    #[test]
    fn far_bump_lowers_the_front_of_the_coupled_profile() {
        // Extra mass far from the origin raises c through the flux weight
        // more than it raises the convolution at the front, so φ0 falls
        // near x = 0 even though c0 rises.
        let base = disc_problem();
        let opts = SemiWaveOptions::default();
        let s1 = solve_semiwave(&base, &opts).unwrap();
        let upper = SemiWaveProblem {
            kernel: bumped(&base.kernel, 0.02, 3.0, 0.3),
            ..base.clone()
        };
        let s2 = solve_semiwave(&upper, &opts).unwrap();
        assert!(s2.c0 > s1.c0);
        assert!(s1.phi_at(-0.16) > s2.phi_at(-0.16) + 0.03);
    }

    #[test]
    fn truncated_fat_tail_speeds_grow_without_bound() {
        let base = Kernel1d::j_star(&RadialKernel::power_tail(2, 2.5, 1.0).unwrap());
        assert!(base.first_moment().is_none());
        let opts = SemiWaveOptions {
            dx: Some(0.1),
            ..Default::default()
        };
        let speeds: Vec<f64> = [4.0, 8.0, 16.0]
            .iter()
            .map(|&n| {
                let p = SemiWaveProblem {
                    kernel: base.truncated(n),
                    ..disc_problem()
                };
                solve_semiwave(&p, &opts).unwrap().c0
            })
            .collect();
        assert!(speeds.windows(2).all(|w| w[1] > 1.5 * w[0]), "{speeds:?}");
    }

    #[test]
    fn finite_moment_fat_tail_has_finite_speed() {
        let k = RadialKernel::power_tail(2, 3.5, 1.0).unwrap();
        let opts = SemiWaveOptions {
            dx: Some(0.2),
            max_truncation: 60.0,
            ..Default::default()
        };
        let s = speed_from_kernel(&k, 1.0, 1.0, &Nonlinearity::logistic(1.0), &opts).unwrap();
        let c_hi = Kernel1d::j_star(&k).first_moment().unwrap();
        assert!(s.c0 > 0.0 && s.c0 < c_hi, "{} vs {c_hi}", s.c0);
        assert!(s.residual_speed < 1e-6);
    }

    #[test]
    fn divergent_first_moment_is_rejected() {
        let k = RadialKernel::power_tail(2, 2.5, 1.0).unwrap();
        let e = speed_from_kernel(&k, 1.0, 1.0, &Nonlinearity::logistic(1.0), &coarse());
        assert!(matches!(e, Err(Error::InfiniteSpeed { .. })));
    }
}
