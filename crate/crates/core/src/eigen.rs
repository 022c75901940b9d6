//! Principal eigenvalue of `d(∫_{B_L} J(|x-y|)φ(y)dy - φ) + aφ` on balls.
//!
//! The eigenfunction of a ball is radial, so the problem reduces to the
//! one-dimensional operator `φ ↦ ∫_0^L J̃(r, ρ)φ(ρ)dρ`, discretized with the
//! trapezoid rule on the table nodes `0, dr, 2dr, …` plus the endpoint `L`.
//! Conjugating by `diag(√(w_i r_i^{N-1}))` makes the matrix symmetric; the
//! node `r = 0` decouples (its column weight vanishes) and is recovered
//! afterwards from the eigen relation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::operator::RadialOperator;
use crate::tables::KernelTables;

pub const TOL_EIG: f64 = 1e-8;
pub const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    /// Power iteration on `S + I`, the symmetrized matrix shifted by one.
    Power,
    /// Inverse iteration with a Collatz–Wielandt upper-bound shift and a
    /// banded Cholesky factorization.
    ShiftInvert,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: EigenMethod,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: TOL_EIG,
            max_iter: MAX_ITER,
            method: EigenMethod::ShiftInvert,
        }
    }
}

/// Principal eigenvalue problem on `B_L`.
#[derive(Debug, Clone, Copy)]
pub struct EigenProblem<'a> {
    pub d: f64,
    /// Linearization `f'(0)`.
    pub a: f64,
    pub radius: f64,
    pub tables: &'a KernelTables,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenResult {
    pub lambda1: f64,
    pub radius: f64,
    pub nodes: Vec<f64>,
    /// Radial eigenfunction on `nodes`, normalized to unit maximum.
    pub eigenfunction: Vec<f64>,
    pub iterations: usize,
    /// `‖dKφ - dφ + aφ - λφ‖_∞ / ‖φ‖_∞`.
    pub residual: f64,
    /// Weighted Rayleigh quotient of the unsymmetrized operator, mapped to λ.
    pub rayleigh_unsymmetrized: f64,
}

/// Trapezoid discretization of the radial operator on `[0, L]`.
pub(crate) struct RadialGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `a[k]` holds `(first column, values)` of `J̃(x_k, x_l) w_l`.
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl RadialGrid {
    pub fn build(tables: &KernelTables, radius: f64) -> Result<Self> {
        let dr = tables.dr();
        if !(radius >= dr * (1.0 - 1e-9)) {
            return Err(Error::invalid(format!(
                "ball radius {radius} is smaller than one grid cell ({dr})"
            )));
        }
        let m = ((radius / dr) + 1e-9).floor() as usize;
        let rm = m as f64 * dr;
        let extra = radius - rm > 1e-9 * dr;
        let mut nodes: Vec<f64> = (0..=m).map(|i| tables.node(i)).collect();
        let mut weights = vec![dr; m + 1];
        weights[0] = 0.5 * dr;
        if extra {
            let delta = radius - rm;
            weights[m] = 0.5 * dr + 0.5 * delta;
            nodes.push(radius);
            weights.push(0.5 * delta);
        } else {
            weights[m] = 0.5 * dr;
        }
        if m == 0 {
            weights[0] = 0.5 * (radius - rm);
        }
        tables.ensure(m + 1);
        let rd = tables.read();
        let n = nodes.len();
        let reach = tables
            .band()
            .map(|b| b + 1)
            .unwrap_or(usize::MAX);
        let mut rows = Vec::with_capacity(n);
        for k in 0..n {
            let lo = k.saturating_sub(reach);
            let hi = k.saturating_add(reach).min(n - 1);
            let mut vals = Vec::with_capacity(hi - lo + 1);
            for l in lo..=hi {
                let jt = if k <= m && l <= m {
                    rd.row(k).jtilde(l)
                } else {
                    tables.jtilde_at(nodes[k], nodes[l])
                };
                vals.push(jt * weights[l]);
            }
            rows.push((lo, vals));
        }
        Ok(Self {
            nodes,
            weights,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (k, (lo, vals)) in self.rows.iter().enumerate() {
            out[k] = vals.iter().zip(&v[*lo..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Symmetric band matrix stored by lower diagonals, rows `1..n` of the grid.
struct SymBand {
    n: usize,
    bw: usize,
    /// `low[i][j]` holds entry `(i, i - bw + j)`.
    low: Vec<Vec<f64>>,
}

impl SymBand {
    fn from_grid(grid: &RadialGrid, dim: usize) -> Self {
        let n = grid.len() - 1;
        let scale: Vec<f64> = grid
            .nodes
            .iter()
            .zip(&grid.weights)
            .map(|(x, w)| (w * x.powi(dim as i32 - 1)).sqrt())
            .collect();
        let bw = grid
            .rows
            .iter()
            .enumerate()
            .map(|(k, (lo, _))| k - lo)
            .max()
            .unwrap_or(0)
            .min(n.saturating_sub(1));
        let entry = |k: usize, l: usize| -> f64 {
            let (lo, vals) = &grid.rows[k];
            if l < *lo || l - lo >= vals.len() {
                return 0.0;
            }
            scale[k] * vals[l - lo] / scale[l]
        };
        let mut low = vec![vec![0.0; bw + 1]; n];
        for i in 0..n {
            for j in 0..=bw {
                if i + j < bw {
                    continue;
                }
                let c = i + j - bw;
                // Grid index is matrix index + 1.
                let v = 0.5 * (entry(i + 1, c + 1) + entry(c + 1, i + 1));
                low[i][j] = v;
            }
        }
        Self { n, bw, low }
    }

    #[inline]
    fn get(&self, i: usize, c: usize) -> f64 {
        let (i, c) = if c > i { (c, i) } else { (i, c) };
        if i - c > self.bw {
            0.0
        } else {
            self.low[i][c + self.bw - i]
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let row = &self.low[i];
            let c0 = i.saturating_sub(self.bw);
            let mut acc = 0.0;
            for c in c0..i {
                let a = row[c + self.bw - i];
                acc += a * v[c];
                out[c] += a * v[i];
            }
            acc += row[self.bw] * v[i];
            out[i] += acc;
        }
    }

    /// Cholesky factor of `shift·I - S`, or `None` if not positive definite.
    fn shifted_cholesky(&self, shift: f64) -> Option<Vec<Vec<f64>>> {
        let (n, bw) = (self.n, self.bw);
        let mut l = vec![vec![0.0; bw + 1]; n];
        for i in 0..n {
            let c0 = i.saturating_sub(bw);
            for c in c0..=i {
                let mut s = if c == i { shift } else { 0.0 } - self.get(i, c);
                let k0 = c0.max(c.saturating_sub(bw));
                for k in k0..c {
                    s -= l[i][k + bw - i] * l[c][k + bw - c];
                }
                if c == i {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i][bw] = s.sqrt();
                } else {
                    l[i][c + bw - i] = s / l[c][bw];
                }
            }
        }
        Some(l)
    }

    fn cholesky_solve(&self, l: &[Vec<f64>], b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for c in i.saturating_sub(bw)..i {
                s -= l[i][c + bw - i] * b[c];
            }
            b[i] = s / l[i][bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for r in (i + 1)..(i + bw + 1).min(n) {
                s -= l[r][i + bw - r] * b[r];
            }
            b[i] = s / l[i][bw];
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct TopPair {
    eta: f64,
    vector: Vec<f64>,
    iterations: usize,
}

fn residual_sup(s: &SymBand, v: &[f64], eta: f64, buf: &mut [f64]) -> f64 {
    s.apply(v, buf);
    let r = buf
        .iter()
        .zip(v)
        .map(|(a, b)| (a - eta * b).abs())
        .fold(0.0, f64::max);
    let vmax = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    r / vmax
}

fn power_top(s: &SymBand, tol: f64, max_iter: usize) -> Result<TopPair> {
    let n = s.n;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for it in 1..=max_iter {
        s.apply(&v, &mut w);
        // Shift by one keeps the Perron root dominant.
        w.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        normalize(&mut w);
        std::mem::swap(&mut v, &mut w);
        if it % 10 == 0 || it == max_iter {
            s.apply(&v, &mut buf);
            let eta = dot(&v, &buf);
            if residual_sup(s, &v, eta, &mut buf) < tol {
                return Ok(TopPair {
                    eta,
                    vector: v,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::numerical(format!(
        "power iteration did not converge in {max_iter} iterations; refine the grid"
    )))
}

fn shift_invert_top(s: &SymBand, tol: f64, max_iter: usize) -> Result<TopPair> {
    let n = s.n;
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut iterations = 0;
    // Warm-up: a few power steps make v positive and smooth.
    for _ in 0..20 {
        s.apply(&v, &mut w);
        w.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        normalize(&mut w);
        std::mem::swap(&mut v, &mut w);
        iterations += 1;
    }
    let mut buf = vec![0.0; n];
    while iterations < max_iter {
        // Collatz–Wielandt: max (Sv)_i / v_i bounds the Perron root above.
        s.apply(&v, &mut buf);
        let upper = buf
            .iter()
            .zip(&v)
            .filter(|(_, b)| **b > 0.0)
            .map(|(a, b)| a / b)
            .fold(f64::NEG_INFINITY, f64::max);
        let eta_lo = dot(&v, &buf);
        let mut shift = upper.max(eta_lo) + 1e-12 * upper.abs().max(1.0);
        let factor = loop {
            match s.shifted_cholesky(shift) {
                Some(l) => break l,
                None => shift += 1e-8 * shift.abs().max(1.0),
            }
        };
        for _ in 0..8 {
            w.copy_from_slice(&v);
            s.cholesky_solve(&factor, &mut w);
            normalize(&mut w);
            if w.iter().sum::<f64>() < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            std::mem::swap(&mut v, &mut w);
            iterations += 1;
            s.apply(&v, &mut buf);
            let eta = dot(&v, &buf);
            if residual_sup(s, &v, eta, &mut buf) < tol {
                return Ok(TopPair {
                    eta,
                    vector: v,
                    iterations,
                });
            }
        }
    }
    Err(Error::numerical(format!(
        "shift-invert iteration did not converge in {max_iter} iterations"
    )))
}

/// Principal eigenvalue `λ₁(L)` with its positive radial eigenfunction.
pub fn lambda1(p: &EigenProblem<'_>, opts: &EigenOptions) -> Result<EigenResult> {
    if !(p.d > 0.0) {
        return Err(Error::invalid(format!("diffusion rate d = {} must be positive", p.d)));
    }
    let grid = RadialGrid::build(p.tables, p.radius)?;
    let dim = p.tables.kernel().dim();
    let n = grid.len();
    let sym = SymBand::from_grid(&grid, dim);
    let top = match opts.method {
        EigenMethod::Power => power_top(&sym, opts.tol, opts.max_iter)?,
        EigenMethod::ShiftInvert => shift_invert_top(&sym, opts.tol, opts.max_iter)?,
    };
    let eta = top.eta;
    // Undo the conjugation on nodes 1.., then recover the center value.
    let mut phi = vec![0.0; n];
    for k in 1..n {
        let sc = (grid.weights[k] * grid.nodes[k].powi(dim as i32 - 1)).sqrt();
        phi[k] = top.vector[k - 1] / sc;
    }
    let mut aphi = vec![0.0; n];
    grid.apply(&phi, &mut aphi);
    phi[0] = aphi[0] / eta;
    aphi[0] = eta * phi[0];
    let sup = phi.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let sign = if phi.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    phi.iter_mut().for_each(|x| *x *= sign / sup);
    aphi.iter_mut().for_each(|x| *x *= sign / sup);
    let residual = p.d
        * aphi
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - eta * b).abs())
            .fold(0.0, f64::max);
    // Weighted Rayleigh quotient ⟨φ, Aφ⟩_W / ⟨φ, φ⟩_W, W = w r^{N-1}.
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        let wk = grid.weights[k] * grid.nodes[k].powi(dim as i32 - 1);
        num += wk * phi[k] * aphi[k];
        den += wk * phi[k] * phi[k];
    }
    let eta_unsym = num / den;
    if phi[..n - 1].iter().any(|x| !(*x > 0.0)) {
        return Err(Error::numerical(
            "principal eigenfunction is not positive in the interior; refine the grid",
        ));
    }
    Ok(EigenResult {
        lambda1: p.d * eta - p.d + p.a,
        radius: p.radius,
        nodes: grid.nodes,
        eigenfunction: phi,
        iterations: top.iterations,
        residual,
        rayleigh_unsymmetrized: p.d * eta_unsym - p.d + p.a,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LStar {
    pub l_star: f64,
    pub bracket: (f64, f64),
    pub lambda_at_bracket: (f64, f64),
}

/// Bisection for the radius where `λ₁(L)` crosses zero (`0 < a < d`).
pub fn find_l_star(
    d: f64,
    a: f64,
    tables: &KernelTables,
    tol_l: f64,
    l_max: f64,
) -> Result<LStar> {
    if !(a > 0.0 && a < d) {
        return Err(Error::invalid(format!(
            "critical radius needs 0 < f'(0) < d, got f'(0) = {a}, d = {d}"
        )));
    }
    let opts = EigenOptions::default();
    let lam = |l: f64| -> Result<f64> {
        lambda1(
            &EigenProblem {
                d,
                a,
                radius: l,
                tables,
            },
            &opts,
        )
        .map(|r| r.lambda1)
    };
    let mut lo = tables.dr();
    let mut f_lo = lam(lo)?;
    if f_lo >= 0.0 {
        return Err(Error::numerical(format!(
            "lambda1 is already nonnegative at one grid cell ({lo}); refine dr"
        )));
    }
    let mut hi = (2.0 * lo).max(tables.kernel().length_scale());
    let mut f_hi = lam(hi)?;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        if hi > l_max {
            return Err(Error::numerical(format!(
                "no sign change of lambda1 below L_max = {l_max} (lambda1({lo}) = {f_lo:e}); f'(0) may be too close to d"
            )));
        }
        f_hi = lam(hi)?;
    }
    while hi - lo > tol_l {
        let mid = 0.5 * (lo + hi);
        let f_mid = lam(mid)?;
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    // Linear interpolation inside the final bracket.
    let l_star = lo + (hi - lo) * (-f_lo) / (f_hi - f_lo);
    Ok(LStar {
        l_star,
        bracket: (lo, hi),
        lambda_at_bracket: (f_lo, f_hi),
    })
}

/// Positive steady state of `w_t = d(∫_{B_L} J w - w) + f(w)`.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub steps: usize,
}

pub fn steady_state(
    radius: f64,
    d: f64,
    f: &Nonlinearity,
    tables: &KernelTables,
    tol_ss: f64,
    max_steps: usize,
) -> Result<SteadyState> {
    f.validate()?;
    let lam = lambda1(
        &EigenProblem {
            d,
            a: f.growth_rate(),
            radius,
            tables,
        },
        &EigenOptions::default(),
    )?;
    if lam.lambda1 <= 0.0 {
        return Err(Error::invalid(format!(
            "no positive steady state on B_{radius}: lambda1 = {:e} <= 0, solutions decay to 0",
            lam.lambda1
        )));
    }
    // Product integration keeps the row masses exact, so the discrete
    // steady state stays below u*.
    let op = RadialOperator::new(tables, radius);
    let m = op.m();
    let (brow, bpart) = op.boundary_row();
    let ustar = f.carrying_capacity();
    let dt = 0.4 / (d + f.lipschitz_on(ustar));
    let mut w = vec![0.5 * ustar; m + 2];
    let mut kw = vec![0.0; m + 2];
    for step in 1..=max_steps {
        op.apply(&w[..=m], w[m + 1], &mut kw[..=m]);
        kw[m + 1] = brow
            .iter()
            .enumerate()
            .map(|(c, (l, r))| l * w[c] + r * w[c + 1])
            .sum::<f64>()
            + bpart.0 * w[m]
            + bpart.1 * w[m + 1];
        let mut change = 0.0_f64;
        for (wi, ki) in w.iter_mut().zip(&kw) {
            let dw = dt * (d * (ki - *wi) + f.eval(*wi));
            *wi += dw;
            change = change.max(dw.abs());
        }
        if change < tol_ss * dt {
            let mut nodes: Vec<f64> = (0..=m).map(|i| tables.node(i)).collect();
            nodes.push(radius);
            return Ok(SteadyState {
                nodes,
                values: w,
                steps: step,
            });
        }
    }
    Err(Error::numerical(format!(
        "steady state not reached within {max_steps} steps"
    )))
}
