//! Gauss–Legendre rules and the panel integrators built on them.
//!
//! Rules are computed once per order by Newton iteration on the Legendre
//! recurrence and cached for the life of the process.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use parking_lot::RwLock;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Integrates `f` over `[a, b]` after the substitution
    /// `x = a + (b - a)(3s² - 2s³)`, whose Jacobian vanishes at both ends.
    /// Square-root endpoint behaviour becomes smooth under this map.
    #[inline]
    pub fn integrate_graded<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let len = b - a;
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let s = 0.5 * (x + 1.0);
            let phi = s * s * (3.0 - 2.0 * s);
            let jac = 6.0 * s * (1.0 - s);
            acc += w * jac * f(a + len * phi);
        }
        0.5 * acc * len
    }

    /// Visits the graded nodes of `[a, b]` as `(x, weight)` pairs, weight
    /// including the Jacobian.
    #[inline]
    pub fn for_each_graded<F: FnMut(f64, f64)>(&self, a: f64, b: f64, mut f: F) {
        let len = b - a;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let s = 0.5 * (x + 1.0);
            let phi = s * s * (3.0 - 2.0 * s);
            let jac = 6.0 * s * (1.0 - s);
            f(a + len * phi, 0.5 * w * jac * len);
        }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared cached rule of order `n`.
pub fn rule(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(r) = cache.read().get(&n) {
        return Arc::clone(r);
    }
    let r = Arc::new(GaussLegendre::new(n));
    cache.write().entry(n).or_insert(r).clone()
}

/// Integrates over consecutive panels `[breaks[k], breaks[k+1]]`.
pub fn integrate_panels<F: FnMut(f64) -> f64>(gl: &GaussLegendre, breaks: &[f64], mut f: F) -> f64 {
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gl.integrate(w[0], w[1], &mut f))
        .sum()
}

/// Integrates `f` over `[a, ∞)` for an integrand that is smooth past `a`
/// and decays like `x^{-decay}` (`decay > 1`) on the length `scale`.
///
/// Panels double in width from `a`; beyond the last panel the remainder is
/// closed with the power-law tail `f(S)·S/(decay-1)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    gl: &GaussLegendre,
    a: f64,
    scale: f64,
    decay: f64,
    mut f: F,
) -> f64 {
    assert!(decay > 1.0, "semi-infinite integral needs decay > 1");
    let scale = scale.max(1e-12);
    let reach = (a.abs() + scale) * 1e7;
    let mut lo = a;
    let mut width = scale;
    let mut acc = 0.0;
    while lo - a < reach {
        let hi = lo + width;
        acc += gl.integrate(lo, hi, &mut f);
        lo = hi;
        width *= 2.0;
    }
    acc + f(lo) * lo / (decay - 1.0)
}
