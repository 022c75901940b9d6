//! Monostable reaction terms `f(u)`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `rate · u (1 - u / capacity)`.
    Logistic { rate: f64, capacity: f64 },
    /// Piecewise-linear interpolation through `(u, f(u))` points starting at
    /// `(0, 0)`, extended linearly past the last point.
    Tabulated { points: Vec<(f64, f64)> },
}

impl Nonlinearity {
    /// `u(1 - u)` scaled so that `f'(0) = rate`.
    pub fn logistic(rate: f64) -> Self {
        Nonlinearity::Logistic {
            rate,
            capacity: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Logistic { rate, capacity } => rate * u * (1.0 - u / capacity),
            Nonlinearity::Tabulated { points } => {
                let k = segment(points, u);
                let (u0, f0) = points[k];
                let (u1, f1) = points[k + 1];
                f0 + (f1 - f0) * (u - u0) / (u1 - u0)
            }
        }
    }

    /// `f'(u)`; for tabulated data, the slope of the segment containing `u`.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Logistic { rate, capacity } => rate * (1.0 - 2.0 * u / capacity),
            Nonlinearity::Tabulated { points } => {
                let k = segment(points, u);
                let (u0, f0) = points[k];
                let (u1, f1) = points[k + 1];
                (f1 - f0) / (u1 - u0)
            }
        }
    }

    /// `f'(0)`.
    pub fn growth_rate(&self) -> f64 {
        match self {
            Nonlinearity::Logistic { rate, .. } => *rate,
            Nonlinearity::Tabulated { points } => points[1].1 / points[1].0,
        }
    }

    /// The positive zero `u*`.
    pub fn carrying_capacity(&self) -> f64 {
        match self {
            Nonlinearity::Logistic { capacity, .. } => *capacity,
            Nonlinearity::Tabulated { points } => {
                for w in points.windows(2) {
                    let ((u0, f0), (u1, f1)) = (w[0], w[1]);
                    if u0 > 0.0 && f0 == 0.0 {
                        return u0;
                    }
                    if f0 > 0.0 && f1 <= 0.0 {
                        return u0 + f0 * (u1 - u0) / (f0 - f1);
                    }
                }
                f64::NAN
            }
        }
    }

    /// Lipschitz constant of `f` on `[0, upper]`.
    pub fn lipschitz_on(&self, upper: f64) -> f64 {
        match self {
            Nonlinearity::Logistic { rate, capacity } => {
                rate.abs() * (1.0f64).max((2.0 * upper / capacity - 1.0).abs())
            }
            Nonlinearity::Tabulated { points } => points
                .windows(2)
                .filter(|w| w[0].0 <= upper)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Positive root of `shift · u + f(u) = 0`, the limit state when the
    /// dispersal kernel has mass `1 + shift / d`.
    pub fn shifted_root(&self, shift: f64) -> Result<f64> {
        match self {
            Nonlinearity::Logistic { rate, capacity } => {
                let u = capacity * (1.0 + shift / rate);
                if u > 0.0 {
                    Ok(u)
                } else {
                    Err(Error::invalid(format!(
                        "no positive root of {shift}·u + f(u) = 0"
                    )))
                }
            }
            Nonlinearity::Tabulated { .. } => {
                let g = |u: f64| shift * u + self.eval(u);
                let mut hi = self.carrying_capacity().max(1e-12);
                let mut guard = 0;
                while g(hi) > 0.0 {
                    hi *= 2.0;
                    guard += 1;
                    if guard > 200 {
                        return Err(Error::invalid("shifted reaction has no positive root"));
                    }
                }
                let mut lo = hi;
                while g(lo) <= 0.0 {
                    lo *= 0.5;
                    if lo < 1e-300 {
                        return Err(Error::invalid("shifted reaction has no positive root"));
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    /// Checks `f(0) = 0 < f'(0)`, a positive zero `u*` with `f'(u*) < 0`, and
    /// the sublinearity `f(u)/u` nonincreasing.
    pub fn validate(&self) -> Result<()> {
        match self {
            Nonlinearity::Logistic { rate, capacity } => {
                if !(*rate > 0.0 && *capacity > 0.0) {
                    return Err(Error::invalid(format!(
                        "logistic rate {rate} and capacity {capacity} must be positive"
                    )));
                }
                Ok(())
            }
            Nonlinearity::Tabulated { points } => {
                if points.len() < 3 || points[0] != (0.0, 0.0) {
                    return Err(Error::invalid(
                        "tabulated f needs at least three points starting at (0, 0)",
                    ));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::invalid("tabulated f abscissae must increase"));
                }
                if !(self.growth_rate() > 0.0) {
                    return Err(Error::invalid("tabulated f must have f'(0) > 0"));
                }
                let ustar = self.carrying_capacity();
                if !ustar.is_finite() {
                    return Err(Error::invalid("tabulated f has no positive zero"));
                }
                let ratios: Vec<f64> = points[1..].iter().map(|(u, f)| f / u).collect();
                if ratios.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                    return Err(Error::invalid("tabulated f violates f(u)/u nonincreasing"));
                }
                Ok(())
            }
        }
    }
}

fn segment(points: &[(f64, f64)], u: f64) -> usize {
    let n = points.len();
    match points.binary_search_by(|p| p.0.total_cmp(&u)) {
        Ok(k) => k.min(n - 2),
        Err(k) => k.saturating_sub(1).min(n - 2),
    }
}
