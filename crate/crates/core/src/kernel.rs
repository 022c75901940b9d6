//! Radial dispersal kernels and their derived quantities.
//!
//! A [`RadialKernel`] is a profile `J(r)` on `[0, ∞)` for a radially
//! symmetric density `J(|x|)` on `ℝ^N`. From it we derive
//!
//! * the planar marginal `J★(l) = ∫_{ℝ^{N-1}} J(|(l, x')|) dx'`, which drives
//!   the one-dimensional front problem, and
//! * the sphere kernel `J̃(r, ρ) = ∫_{∂B_ρ} J(|x - y|) dS_y` with `|x| = r`,
//!   which turns the `N`-dimensional convolution into a radial integral.
//!
//! Both are evaluated by Gauss–Legendre quadrature on panels that are split
//! at every radius where the profile is not smooth.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::{self, integrate_to_infinity, GaussLegendre};

/// Default number of Gauss–Legendre nodes per panel for single evaluations.
pub const DEFAULT_ORDER: usize = 64;
/// Tolerance used when accepting the unit-mass condition.
pub const TOL_NORM: f64 = 1e-6;
/// Agreement required between consecutive orders before a value is accepted.
pub const TOL_ORDER: f64 = 1e-9;
const MAX_ORDER: usize = 512;

/// Surface area `ω_k` of the unit sphere in `ℝ^k` (`ω_1 = 2`, `ω_2 = 2π`).
pub fn sphere_area(k: usize) -> f64 {
    assert!(k >= 1);
    // Γ(k/2) for integer k by the half-integer recursion.
    let half = k as f64 / 2.0;
    let mut g = if k.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < half - 1e-12 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(half) / g
}

/// Volume of the unit ball in `ℝ^k`.
pub fn ball_volume(k: usize) -> f64 {
    sphere_area(k) / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Compact { support: f64 },
    FatTail { beta: f64, scale: f64 },
    Custom {
        support: Option<f64>,
        tail_exponent: Option<f64>,
    },
}

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Profile {
    Uniform { height: f64, radius: f64 },
    Parabolic { height: f64, radius: f64 },
    PowerTail { height: f64, beta: f64, scale: f64 },
    Custom { f: ProfileFn, tag: String },
}

/// A radially symmetric kernel on `ℝ^N`.
#[derive(Clone)]
pub struct RadialKernel {
    dim: usize,
    profile: Profile,
    kind: KernelKind,
    kinks: Vec<f64>,
}

impl fmt::Debug for RadialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialKernel")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("label", &self.label())
            .finish()
    }
}

impl RadialKernel {
    /// Normalized indicator of the ball of radius `radius` (disc for `N = 2`).
    pub fn uniform(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        positive("radius", radius)?;
        let height = 1.0 / (ball_volume(dim) * radius.powi(dim as i32));
        Ok(Self {
            dim,
            profile: Profile::Uniform { height, radius },
            kind: KernelKind::Compact { support: radius },
            kinks: vec![radius],
        })
    }

    /// Normalized `C (1 - r²/R²)₊`, continuous with compact support.
    pub fn parabolic(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        positive("radius", radius)?;
        let n = dim as f64;
        // ω_N ∫_0^R (1 - r²/R²) r^{N-1} dr = ω_N R^N (1/N - 1/(N+2))
        let mass = sphere_area(dim) * radius.powi(dim as i32) * (1.0 / n - 1.0 / (n + 2.0));
        Ok(Self {
            dim,
            profile: Profile::Parabolic {
                height: 1.0 / mass,
                radius,
            },
            kind: KernelKind::Compact { support: radius },
            kinks: vec![radius],
        })
    }

    /// Normalized `C min(1, (r/scale)^{-β})`: flat core, algebraic tail.
    /// Requires `β > N` for integrability.
    pub fn power_tail(dim: usize, beta: f64, scale: f64) -> Result<Self> {
        check_dim(dim)?;
        positive("scale", scale)?;
        let n = dim as f64;
        if !(beta > n) {
            return Err(Error::invalid(format!(
                "tail exponent beta = {beta} must exceed N = {dim} for an integrable kernel"
            )));
        }
        let mass = sphere_area(dim) * scale.powi(dim as i32) * (1.0 / n + 1.0 / (beta - n));
        Ok(Self {
            dim,
            profile: Profile::PowerTail {
                height: 1.0 / mass,
                beta,
                scale,
            },
            kind: KernelKind::FatTail { beta, scale },
            kinks: vec![scale],
        })
    }

    /// Arbitrary profile. Exactly one of `support` (profile vanishes beyond
    /// it) or `tail_exponent` (profile decays like `r^{-β}`) must be given.
    /// `kinks` lists radii where the profile is not smooth. `tag` names the
    /// profile and enters the kernel hash.
    pub fn custom<F>(
        dim: usize,
        tag: impl Into<String>,
        profile: F,
        support: Option<f64>,
        tail_exponent: Option<f64>,
        kinks: Vec<f64>,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_dim(dim)?;
        match (support, tail_exponent) {
            (Some(k), None) => positive("support", k)?,
            (None, Some(b)) if b > dim as f64 => {}
            (None, Some(b)) => {
                return Err(Error::invalid(format!(
                    "tail exponent {b} must exceed N = {dim}"
                )))
            }
            _ => {
                return Err(Error::invalid(
                    "custom kernel needs exactly one of support or tail exponent",
                ))
            }
        }
        let mut kinks: Vec<f64> = kinks.into_iter().filter(|k| *k > 0.0).collect();
        if let Some(k) = support {
            kinks.push(k);
            kinks.retain(|x| *x <= k);
        }
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        Ok(Self {
            dim,
            profile: Profile::Custom {
                f: Arc::new(profile),
                tag: tag.into(),
            },
            kind: KernelKind::Custom {
                support,
                tail_exponent,
            },
            kinks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// Radii where the profile is not smooth, ascending.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn support(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Compact { support } => Some(support),
            KernelKind::Custom { support, .. } => support,
            KernelKind::FatTail { .. } => None,
        }
    }

    /// Exponent `β` of an algebraic tail `J(r) ≈ r^{-β}`.
    pub fn tail_exponent(&self) -> Option<f64> {
        match self.kind {
            KernelKind::FatTail { beta, .. } => Some(beta),
            KernelKind::Custom { tail_exponent, .. } => tail_exponent,
            KernelKind::Compact { .. } => None,
        }
    }

    /// Characteristic length of the profile.
    pub fn length_scale(&self) -> f64 {
        match self.kind {
            KernelKind::Compact { support } => support,
            KernelKind::FatTail { scale, .. } => scale,
            KernelKind::Custom { support, .. } => {
                support.or_else(|| self.kinks.last().copied()).unwrap_or(1.0)
            }
        }
    }

    /// Whether `∫_0^∞ J(r) r^N dr` is finite.
    pub fn has_finite_nth_moment(&self) -> bool {
        match self.tail_exponent() {
            Some(beta) => beta > self.dim as f64 + 1.0,
            None => true,
        }
    }

    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::Uniform { height, radius } => {
                if r <= *radius {
                    *height
                } else {
                    0.0
                }
            }
            Profile::Parabolic { height, radius } => {
                if r < *radius {
                    let x = r / radius;
                    height * (1.0 - x * x)
                } else {
                    0.0
                }
            }
            Profile::PowerTail {
                height,
                beta,
                scale,
            } => {
                if r <= *scale {
                    *height
                } else {
                    height * (r / scale).powf(-beta)
                }
            }
            Profile::Custom { f, .. } => {
                if let Some(k) = self.support() {
                    if r > k {
                        return 0.0;
                    }
                }
                f(r)
            }
        }
    }

    pub fn label(&self) -> String {
        match &self.profile {
            Profile::Uniform { radius, .. } => format!("uniform(N={}, R={radius})", self.dim),
            Profile::Parabolic { radius, .. } => format!("parabolic(N={}, R={radius})", self.dim),
            Profile::PowerTail { beta, scale, .. } => {
                format!("power_tail(N={}, beta={beta}, scale={scale})", self.dim)
            }
            Profile::Custom { tag, .. } => format!("custom(N={}, {tag})", self.dim),
        }
    }

    /// Stable 64-bit identity of the kernel, used to key cached tables.
    pub fn hash64(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.label().as_bytes());
        h.update((self.dim as u64).to_le_bytes());
        // Sampled values pin down custom profiles that share a tag.
        for k in 0..64 {
            let r = self.length_scale() * k as f64 / 16.0;
            h.update(self.profile(r).to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// `∫_0^∞ J(r) r^p dr`, or `None` when the tail makes it diverge.
    pub fn radial_moment(&self, p: f64) -> Option<f64> {
        let gl = quadrature::rule(DEFAULT_ORDER);
        let mut breaks = vec![0.0];
        breaks.extend(self.kinks.iter().copied());
        if let Some(k) = self.support() {
            breaks.retain(|x| *x <= k);
            if *breaks.last().unwrap() < k {
                breaks.push(k);
            }
        }
        let f = |r: f64| self.profile(r) * r.powf(p);
        let inner = quadrature::integrate_panels(&gl, &breaks, f);
        match self.tail_exponent() {
            None => Some(inner),
            Some(beta) => {
                let decay = beta - p;
                if decay <= 1.0 {
                    return None;
                }
                let a = *breaks.last().unwrap();
                let scale = if a > 0.0 { a } else { self.length_scale() };
                Some(inner + integrate_to_infinity(&gl, a, scale, decay, f))
            }
        }
    }

    /// `ω_N ∫_0^∞ J(r) r^{N-1} dr`, the total mass of `J(|x|)` on `ℝ^N`.
    pub fn normalization(&self) -> f64 {
        sphere_area(self.dim)
            * self
                .radial_moment(self.dim as f64 - 1.0)
                .expect("integrable kernel has finite mass")
    }

    /// `J★(l)` by `ω_{N-1} ∫_0^∞ J(√(l² + s²)) s^{N-2} ds`.
    pub fn j_star(&self, l: f64) -> f64 {
        self.j_star_with(l, &quadrature::rule(DEFAULT_ORDER))
    }

    pub fn j_star_with(&self, l: f64, gl: &GaussLegendre) -> f64 {
        let l = l.abs();
        let n = self.dim;
        let omega = sphere_area(n - 1);
        let pw = n as i32 - 2;
        let f = |s: f64| self.profile((l * l + s * s).sqrt()) * s.powi(pw);
        let mut breaks = vec![0.0];
        for &k in &self.kinks {
            if k > l {
                breaks.push((k * k - l * l).sqrt());
            }
        }
        match self.support() {
            Some(k) => {
                if l >= k {
                    return 0.0;
                }
                omega * quadrature::integrate_panels(gl, &breaks, f)
            }
            None => {
                let beta = self.tail_exponent().expect("non-compact kernel has a tail");
                let a = *breaks.last().unwrap();
                let inner = quadrature::integrate_panels(gl, &breaks, f);
                let scale = l.max(self.length_scale()).max(a);
                let tail = integrate_to_infinity(gl, a, scale, beta - n as f64 + 2.0, f);
                omega * (inner + tail)
            }
        }
    }

    /// Breakpoints in θ ∈ [0, π] for the angular form of `J̃(r, ρ)`, or
    /// `None` when the integrand vanishes identically.
    fn angular_breaks(&self, r: f64, rho: f64, split: bool) -> Option<Vec<f64>> {
        let near = (rho - r).abs();
        let far = rho + r;
        let theta_at = |eta: f64| {
            let s2 = (eta * eta - near * near) / (4.0 * r * rho);
            2.0 * s2.clamp(0.0, 1.0).sqrt().asin()
        };
        let mut hi = PI;
        if let Some(k) = self.support() {
            if near >= k {
                return None;
            }
            if k < far {
                hi = theta_at(k);
            }
        }
        let mut breaks = vec![0.0, hi];
        let mut last_kink = 0.0_f64;
        for &k in &self.kinks {
            if near < k && k < far {
                let t = theta_at(k);
                if t < hi {
                    breaks.push(t);
                    last_kink = last_kink.max(t);
                }
            }
        }
        if self.support().is_none() {
            // Geometric grading where the algebraic tail varies fastest.
            let width = near.max(self.length_scale()) / (r * rho).sqrt();
            let mut step = width;
            while last_kink + step < hi {
                breaks.push(last_kink + step);
                step *= 2.0;
            }
        }
        if split && hi > PI / 2.0 {
            breaks.push(PI / 2.0);
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        Some(breaks)
    }

    #[inline]
    fn angular_integrand(&self, r: f64, rho: f64, theta: f64) -> f64 {
        let near = rho - r;
        let s = (0.5 * theta).sin();
        let eta = (near * near + 4.0 * r * rho * s * s).sqrt();
        let j = self.profile(eta);
        match self.dim {
            2 => j,
            3 => j * theta.sin(),
            n => j * theta.sin().powi(n as i32 - 2),
        }
    }

    /// `J̃(r, ρ)` with a fixed rule per panel.
    pub fn j_tilde_with(&self, r: f64, rho: f64, gl: &GaussLegendre) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let n = self.dim;
        if r <= 0.0 {
            return sphere_area(n) * rho.powi(n as i32 - 1) * self.profile(rho);
        }
        let Some(breaks) = self.angular_breaks(r, rho, false) else {
            return 0.0;
        };
        let integral =
            quadrature::integrate_panels(gl, &breaks, |t| self.angular_integrand(r, rho, t));
        sphere_area(n - 1) * rho.powi(n as i32 - 1) * integral
    }

    /// `J̃(r, ρ)` at order 64, doubling the order until consecutive results
    /// agree to [`TOL_ORDER`].
    pub fn j_tilde(&self, r: f64, rho: f64) -> f64 {
        let mut order = DEFAULT_ORDER / 2;
        let mut prev = self.j_tilde_with(r, rho, &quadrature::rule(order));
        loop {
            order *= 2;
            let cur = self.j_tilde_with(r, rho, &quadrature::rule(order));
            if (cur - prev).abs() <= TOL_ORDER * cur.abs().max(1e-300) || order >= MAX_ORDER {
                return cur;
            }
            prev = cur;
        }
    }

    /// Contributions to `J̃(r, ρ)` from the near hemisphere (`y·x ≥ 0`) and
    /// the far hemisphere (`y·x ≤ 0`) of `∂B_ρ`.
    pub fn j_tilde_split(&self, r: f64, rho: f64) -> Result<(f64, f64)> {
        if r <= 0.0 {
            return Err(Error::invalid(
                "hemisphere split of J~ is undefined at the center r = 0",
            ));
        }
        if rho <= 0.0 {
            return Ok((0.0, 0.0));
        }
        let n = self.dim;
        let Some(breaks) = self.angular_breaks(r, rho, true) else {
            return Ok((0.0, 0.0));
        };
        let gl = quadrature::rule(DEFAULT_ORDER);
        let mut plus = 0.0;
        let mut minus = 0.0;
        for w in breaks.windows(2) {
            let v = gl.integrate(w[0], w[1], |t| self.angular_integrand(r, rho, t));
            if w[1] <= PI / 2.0 + 1e-15 {
                plus += v;
            } else {
                minus += v;
            }
        }
        let c = sphere_area(n - 1) * rho.powi(n as i32 - 1);
        Ok((c * plus, c * minus))
    }

    /// Breakpoints in ρ where `J̃(r, ·)` is not smooth, within `[a, b]`.
    pub(crate) fn radial_kinks(&self, r: f64, a: f64, b: f64) -> Vec<f64> {
        let mut pts = vec![a, b];
        for &k in &self.kinks {
            for p in [(r - k).abs(), r + k] {
                if p > a && p < b {
                    pts.push(p);
                }
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        pts
    }

    /// Interval of ρ outside which `J̃(r, ρ)` vanishes.
    pub(crate) fn rho_range(&self, r: f64) -> (f64, f64) {
        match self.support() {
            Some(k) => ((r - k).max(0.0), r + k),
            None => (0.0, f64::INFINITY),
        }
    }

    /// Moments of `J̃(r, ·)` on `[a, b]`: `(∫ J̃ dρ, ∫ J̃ (ρ - a)/(b - a) dρ)`.
    pub fn j_tilde_cell_moments(
        &self,
        r: f64,
        a: f64,
        b: f64,
        rho_rule: &GaussLegendre,
        theta_rule: &GaussLegendre,
    ) -> (f64, f64) {
        let (lo, hi) = self.rho_range(r);
        let a0 = a.max(lo);
        let b0 = b.min(hi);
        if b0 <= a0 || b <= a {
            return (0.0, 0.0);
        }
        let len = b - a;
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for w in self.radial_kinks(r, a0, b0).windows(2) {
            rho_rule.for_each_graded(w[0], w[1], |rho, wt| {
                let v = wt * self.j_tilde_with(r, rho, theta_rule);
                m0 += v;
                m1 += v * (rho - a) / len;
            });
        }
        (m0, m1)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::invalid(format!("dimension N = {dim} must be >= 2")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

/// Outcome of checking a kernel against the unit-mass, sign and
/// center-positivity requirements.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub label: String,
    pub dim: usize,
    pub normalization: f64,
    pub center_value: f64,
    pub min_value: f64,
    pub min_at: f64,
    /// `∫_0^∞ J(r) r^N dr`, `None` when divergent.
    pub nth_moment: Option<f64>,
    pub finite_nth_moment: bool,
    pub accepted: bool,
    pub issues: Vec<String>,
}

/// Computes the validation report without rejecting.
pub fn inspect_kernel(k: &RadialKernel) -> ValidationReport {
    let horizon = k.support().unwrap_or(50.0 * k.length_scale());
    let mut min_value = f64::INFINITY;
    let mut min_at = 0.0;
    let samples = 8192;
    let mut probe = |r: f64| {
        let v = k.profile(r);
        if v < min_value || v.is_nan() {
            min_value = v;
            min_at = r;
        }
    };
    for i in 0..=samples {
        probe(horizon * i as f64 / samples as f64);
    }
    for &kink in k.kinks() {
        probe(kink * (1.0 - 1e-9));
    }
    let center_value = k.profile(0.0);
    let mut issues = Vec::new();
    let sign_ok = min_value >= 0.0;
    if !sign_ok {
        issues.push(format!("profile is negative ({min_value:e}) at r = {min_at}"));
    }
    if !(center_value > 0.0) {
        issues.push(format!("J(0) = {center_value} is not positive"));
    }
    let normalization = k.normalization();
    if (normalization - 1.0).abs() > TOL_NORM || !normalization.is_finite() {
        issues.push(format!(
            "normalization {normalization} differs from 1 by more than {TOL_NORM:e}"
        ));
    }
    let nth_moment = k.radial_moment(k.dim() as f64);
    ValidationReport {
        label: k.label(),
        dim: k.dim(),
        normalization,
        center_value,
        min_value,
        min_at,
        finite_nth_moment: nth_moment.is_some(),
        nth_moment,
        accepted: issues.is_empty(),
        issues,
    }
}

/// Accepts a kernel or rejects it as invalid model input.
pub fn validate_kernel(k: &RadialKernel) -> Result<ValidationReport> {
    let report = inspect_kernel(k);
    if report.accepted {
        Ok(report)
    } else {
        Err(Error::invalid(format!(
            "kernel {} rejected: {}",
            report.label,
            report.issues.join("; ")
        )))
    }
}

/// Both sides of `∫_0^∞ l J★(l) dl = ω_{N-1}/(N-1) ∫_0^∞ J(r) r^N dr`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// First moment of `J★` on `[0, ∞)`, integrated from `j_star` values.
pub fn j_star_first_moment(k: &RadialKernel) -> Result<f64> {
    if !k.has_finite_nth_moment() {
        let beta = k.tail_exponent().unwrap_or(f64::NAN);
        return Err(Error::InfiniteSpeed {
            beta,
            limit: k.dim() as f64 + 1.0,
        });
    }
    let gl = quadrature::rule(32);
    let f = |l: f64| l * k.j_star(l);
    match k.support() {
        Some(s) => {
            // J★ has square-root type behaviour at the support edge for N = 2.
            let mut breaks = vec![0.0];
            breaks.extend(k.kinks().iter().copied().filter(|x| *x < s));
            breaks.push(s);
            Ok(breaks
                .windows(2)
                .map(|w| gl.integrate_graded(w[0], w[1], f))
                .sum())
        }
        None => {
            let beta = k.tail_exponent().unwrap();
            let scale = k.length_scale();
            let inner = gl.integrate_graded(0.0, scale, f);
            // l J★(l) ≈ l^{N-β}
            let decay = beta - k.dim() as f64;
            Ok(inner + integrate_to_infinity(&gl, scale, scale, decay, f))
        }
    }
}

pub fn moment_identity_check(k: &RadialKernel) -> Result<MomentIdentity> {
    let lhs = j_star_first_moment(k)?;
    let n = k.dim();
    let moment = k.radial_moment(n as f64).ok_or_else(|| Error::InfiniteSpeed {
        beta: k.tail_exponent().unwrap_or(f64::NAN),
        limit: n as f64 + 1.0,
    })?;
    let rhs = sphere_area(n - 1) / (n as f64 - 1.0) * moment;
    Ok(MomentIdentity {
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / rhs.abs(),
    })
}

/// One entry of [`flux_limit_check`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FluxSample {
    pub h: f64,
    /// `F(h) = ∫_0^h ∫_h^∞ J̃(r, ρ) dρ dr`.
    pub flux: f64,
}

/// Outward flux `F(h)` of a uniform density from `B_h`, for each `h`.
///
/// `F(h)` is the trapezoid rule in `r` over the nodes of a table with step
/// `dr`, with the inner integral taken from
/// [`tail_mass`](crate::tables::TablesRead::tail_mass). Each `h` is rounded
/// to the nearest node.
pub fn flux_limit_check(k: &RadialKernel, h_values: &[f64], dr: f64) -> Result<Vec<FluxSample>> {
    let tables = crate::tables::KernelTables::new(k.clone(), dr)?;
    let nodes: Vec<usize> = h_values
        .iter()
        .map(|h| {
            if !(*h > 0.0) {
                return Err(Error::invalid(format!("flux radius h = {h} must be positive")));
            }
            Ok(((h / dr).round() as usize).max(1))
        })
        .collect::<Result<_>>()?;
    let Some(&max_node) = nodes.iter().max() else {
        return Ok(Vec::new());
    };
    tables.ensure(max_node);
    let rd = tables.read();
    Ok(nodes
        .iter()
        .map(|&m| {
            let mut acc = 0.5 * (rd.tail_mass(0, m) + rd.tail_mass(m, m));
            for i in 1..m {
                acc += rd.tail_mass(i, m);
            }
            FluxSample {
                h: m as f64 * dr,
                flux: acc * dr,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn disc() -> RadialKernel {
        RadialKernel::uniform(2, 1.0).unwrap()
    }

    fn ball() -> RadialKernel {
        RadialKernel::uniform(3, 1.0).unwrap()
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(1), 2.0, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(4), 2.0 * PI * PI, epsilon = 1e-13);
    }

    #[test]
    fn validate_disc_and_ball() {
        let r = validate_kernel(&disc()).unwrap();
        assert_relative_eq!(r.normalization, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.nth_moment.unwrap(), 1.0 / (3.0 * PI), epsilon = 1e-12);
        let r = validate_kernel(&ball()).unwrap();
        assert_relative_eq!(r.normalization, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_negative_profile() {
        let k = RadialKernel::custom(
            2,
            "negated outer half",
            |r| if r < 0.5 { 1.0 / PI } else { -1.0 / PI },
            Some(1.0),
            None,
            vec![0.5],
        )
        .unwrap();
        let err = validate_kernel(&k).unwrap_err();
        assert!(err.is_model_input());
        assert!(err.to_string().contains("negative"));
    }

    #[test]
    fn rejects_bad_normalization_and_center() {
        let k = RadialKernel::custom(2, "double", |_| 2.0 / PI, Some(1.0), None, vec![]).unwrap();
        assert!(validate_kernel(&k).is_err());
        let k = RadialKernel::custom(2, "hole", |r| if r < 0.1 { 0.0 } else { 1.0 }, Some(1.0), None, vec![0.1])
            .unwrap();
        let rep = inspect_kernel(&k);
        assert!(rep.issues.iter().any(|s| s.contains("J(0)")));
    }

    #[test]
    fn power_tail_is_normalized() {
        for (n, beta) in [(2, 2.5), (2, 3.0), (2, 3.5), (3, 3.7)] {
            let k = RadialKernel::power_tail(n, beta, 1.0).unwrap();
            assert_relative_eq!(k.normalization(), 1.0, epsilon = 1e-9);
            assert_eq!(k.has_finite_nth_moment(), beta > n as f64 + 1.0);
        }
        assert!(RadialKernel::power_tail(2, 2.0, 1.0).is_err());
    }

    #[test]
    fn j_star_closed_forms() {
        let k = disc();
        assert_relative_eq!(k.j_star(0.0), 2.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(k.j_star(0.5), 2.0 / PI * 0.75f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(k.j_star(-0.5), k.j_star(0.5), epsilon = 1e-15);
        assert_eq!(k.j_star(1.5), 0.0);
        // Unit mass forces J★(l) = (3/4)(1 - l²) for the normalized ball.
        assert_relative_eq!(ball().j_star(0.5), 0.5625, epsilon = 1e-12);
    }

    #[test]
    fn j_tilde_center_and_far() {
        assert_relative_eq!(disc().j_tilde(0.0, 0.5), 1.0, epsilon = 1e-12);
        assert_eq!(disc().j_tilde(5.0, 1.0), 0.0);
    }

    #[test]
    fn j_tilde_ball_touching_spheres() {
        // Whole sphere of radius 1/4 lies in the unit ball around x.
        assert_relative_eq!(ball().j_tilde(0.25, 0.25), 3.0 * 0.0625, epsilon = 1e-12);
        let (plus, minus) = ball().j_tilde_split(0.25, 0.25).unwrap();
        assert_relative_eq!(plus, 0.09375, epsilon = 1e-12);
        assert_relative_eq!(plus + minus, 0.1875, epsilon = 1e-12);
    }

    #[test]
    fn split_rejects_center_and_far_hemisphere_vanishes() {
        assert!(disc().j_tilde_split(0.0, 1.0).is_err());
        let (_, minus) = disc().j_tilde_split(3.0, 3.5).unwrap();
        assert_eq!(minus, 0.0);
    }

    #[test]
    fn moment_identity_compact() {
        let m = moment_identity_check(&disc()).unwrap();
        assert_relative_eq!(m.rhs, 2.0 / (3.0 * PI), epsilon = 1e-12);
        assert!(m.rel_err < 1e-6, "{m:?}");
        let m = moment_identity_check(&ball()).unwrap();
        assert_relative_eq!(m.rhs, 3.0 / 16.0, epsilon = 1e-12);
        assert!(m.rel_err < 1e-6, "{m:?}");
    }

    #[test]
    fn moment_identity_signals_divergence() {
        let k = RadialKernel::power_tail(2, 2.5, 1.0).unwrap();
        assert!(matches!(
            moment_identity_check(&k),
            Err(Error::InfiniteSpeed { .. })
        ));
    }

    #[test]
    fn moment_identity_fat_tail_with_finite_moment() {
        let k = RadialKernel::power_tail(2, 3.5, 1.0).unwrap();
        let m = moment_identity_check(&k).unwrap();
        assert!(m.rel_err < 1e-6, "{m:?}");
    }

    #[test]
    fn flux_approaches_first_moment_of_j_star() {
        let f = flux_limit_check(&disc(), &[20.0, 50.0], 0.05).unwrap();
        let target = 2.0 / (3.0 * PI);
        assert!((f[1].flux - target).abs() / target < 0.05, "{f:?}");
        assert!(flux_limit_check(&disc(), &[], 0.05).unwrap().is_empty());
    }

    #[test]
    fn hash_distinguishes_kernels() {
        assert_ne!(disc().hash64(), ball().hash64());
        assert_eq!(disc().hash64(), disc().hash64());
        assert_ne!(
            RadialKernel::power_tail(2, 2.5, 1.0).unwrap().hash64(),
            RadialKernel::power_tail(2, 2.8, 1.0).unwrap().hash64()
        );
    }
}
