//! Least-squares fits of the front position `h(t)` against the asymptotic
//! laws: linear speed, logarithmic lag, power growth and `t ln t` growth.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{KernelKind, RadialKernel};
use crate::solver::{run_with_tables, speed_estimate, RunConfig, Verdict};
use crate::tables::KernelTables;

/// Fits need at least this many samples inside the window.
pub const MIN_POINTS: usize = 10;
/// Power fits below this `R²` are flagged as pre-asymptotic.
pub const R2_ASYMPTOTIC: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Linear,
    LogShift,
    Power,
    TLogT,
}

/// Which samples a fit uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitWindow {
    /// The final fraction of the time span.
    Tail(f64),
    /// An explicit interval `[t_a, t_b]`.
    Range(f64, f64),
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Tail(0.5)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub model: FitModel,
    /// Slope, log coefficient `a`, exponent, or mean of `h/(t ln t)`.
    pub coefficient: f64,
    /// Intercept `b` of the fitted line (log of the prefactor for power
    /// fits, zero for `t ln t`).
    pub intercept: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub r2: f64,
    /// `(max - min)/mean` of `h/(t ln t)`; `t ln t` fits only.
    pub spread: Option<f64>,
    /// `(min, max)` of `h/(t ln t)`; `t ln t` fits only.
    pub ratio_range: Option<(f64, f64)>,
    /// Set when the fit is unreliable.
    pub flag: Option<String>,
}

/// Ordinary least squares `y ≈ slope·x + intercept`, with `R²` in `[0, 1]`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    (slope, intercept, r_squared(x, y, |t| slope * t + intercept))
}

fn r_squared(x: &[f64], y: &[f64], model: impl Fn(f64) -> f64) -> f64 {
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        ss_res += (b - model(*a)).powi(2);
        ss_tot += (b - my).powi(2);
    }
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if ss_tot <= 1e-28 * scale {
        return if ss_res <= 1e-24 * scale { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Samples inside a window and the window's actual `(t_a, t_b)`.
type Selection = (Vec<f64>, Vec<f64>, (f64, f64));

fn select(t: &[f64], h: &[f64], window: FitWindow) -> Result<Selection> {
    if t.len() != h.len() {
        return Err(Error::invalid(format!(
            "time and front series differ in length ({} vs {})",
            t.len(),
            h.len()
        )));
    }
    if t.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let (a, b) = match window {
        FitWindow::Tail(frac) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::invalid(format!("window fraction {frac} must lie in (0, 1]")));
            }
            (t1 - frac * (t1 - t0), t1)
        }
        FitWindow::Range(a, b) => (a, b),
    };
    let (ts, hs): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(h)
        .filter(|(x, _)| **x >= a && **x <= b)
        .map(|(x, y)| (*x, *y))
        .unzip();
    if ts.len() < MIN_POINTS {
        return Err(Error::invalid(format!(
            "fit window [{a}, {b}] holds {} samples, need at least {MIN_POINTS}",
            ts.len()
        )));
    }
    Ok((ts, hs, (a, b)))
}

/// Slope of `h` against `t`.
pub fn estimate_speed(t: &[f64], h: &[f64], window: FitWindow) -> Result<FitResult> {
    let (ts, hs, win) = select(t, h, window)?;
    let (slope, intercept, r2) = linear_regression(&ts, &hs);
    Ok(FitResult {
        model: FitModel::Linear,
        coefficient: slope,
        intercept,
        window: win,
        points: ts.len(),
        r2,
        spread: None,
        ratio_range: None,
        flag: None,
    })
}

/// Fits `c0·t - h(t) ≈ a ln t + b`.
pub fn estimate_log_shift(t: &[f64], h: &[f64], c0: f64, window: FitWindow) -> Result<FitResult> {
    let (ts, hs, win) = select(t, h, window)?;
    if ts[0] <= 0.0 {
        return Err(Error::invalid("log-shift window must start at t > 0"));
    }
    let lag: Vec<f64> = ts.iter().zip(&hs).map(|(t, h)| c0 * t - h).collect();
    let logt: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let (a, b, r2) = linear_regression(&logt, &lag);
    let increasing = lag.windows(2).all(|w| w[1] >= w[0]) && lag[lag.len() - 1] > lag[0];
    let flag = (!increasing)
        .then(|| "c0·t - h(t) is not increasing on the window; the log coefficient is unreliable".to_string());
    Ok(FitResult {
        model: FitModel::LogShift,
        coefficient: a,
        intercept: b,
        window: win,
        points: ts.len(),
        r2,
        spread: None,
        ratio_range: None,
        flag,
    })
}

/// Exponent of `h ≈ A t^p` from the slope of `ln h` against `ln t`.
pub fn estimate_power(t: &[f64], h: &[f64], window: FitWindow) -> Result<FitResult> {
    let (ts, hs, win) = select(t, h, window)?;
    if ts[0] <= 0.0 || hs.iter().any(|v| *v <= 0.0) {
        return Err(Error::invalid("power fit needs t > 0 and h > 0 on the window"));
    }
    let lt: Vec<f64> = ts.iter().map(|v| v.ln()).collect();
    let lh: Vec<f64> = hs.iter().map(|v| v.ln()).collect();
    let (p, ln_a, r2) = linear_regression(&lt, &lh);
    let flag = (r2 < R2_ASYMPTOTIC)
        .then(|| format!("R² = {r2:.4} below {R2_ASYMPTOTIC}; h may not be in the asymptotic regime"));
    Ok(FitResult {
        model: FitModel::Power,
        coefficient: p,
        intercept: ln_a,
        window: win,
        points: ts.len(),
        r2,
        spread: None,
        ratio_range: None,
        flag,
    })
}

/// Statistics of `h / (t ln t)` on the window.
pub fn estimate_t_log_t(t: &[f64], h: &[f64], window: FitWindow) -> Result<FitResult> {
    let (ts, hs, win) = select(t, h, window)?;
    if ts[0] <= 1.0 {
        return Err(Error::invalid("t ln t fit window must start at t > 1"));
    }
    let ratio: Vec<f64> = ts.iter().zip(&hs).map(|(t, h)| h / (t * t.ln())).collect();
    let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
    let lo = ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / mean;
    let r2 = r_squared(&ts, &hs, |t| mean * t * t.ln());
    let flag = (hi > 2.0 * lo).then(|| format!("h/(t ln t) varies by more than a factor 2 ({lo:.4}..{hi:.4})"));
    Ok(FitResult {
        model: FitModel::TLogT,
        coefficient: mean,
        intercept: 0.0,
        window: win,
        points: ts.len(),
        r2,
        spread: Some(spread),
        ratio_range: Some((lo, hi)),
        flag,
    })
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Mu,
    H0,
    D,
    /// Tail exponent of a `power_tail` kernel.
    Beta,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "h0" => Ok(SweepParam::H0),
            "d" => Ok(SweepParam::D),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::invalid(format!("unknown sweep parameter {s:?}; use mu, h0, d or beta"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Mu => "mu",
            SweepParam::H0 => "h0",
            SweepParam::D => "d",
            SweepParam::Beta => "beta",
        })
    }
}

/// One row of a sweep; failed runs carry `error` and no observables.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub verdict: Option<Verdict>,
    pub h_final: Option<f64>,
    pub t_final: Option<f64>,
    pub speed_est: Option<f64>,
    pub error: Option<String>,
}

fn with_param(template: &RunConfig, param: SweepParam, value: f64) -> Result<RunConfig> {
    let mut cfg = template.clone();
    match param {
        SweepParam::Mu => cfg.mu = value,
        SweepParam::H0 => cfg.h0 = value,
        SweepParam::D => cfg.d = value,
        SweepParam::Beta => match template.kernel.kind() {
            KernelKind::FatTail { scale, .. } => {
                cfg.kernel = RadialKernel::power_tail(template.kernel.dim(), value, *scale)?
            }
            _ => return Err(Error::invalid("beta sweeps need a power_tail kernel")),
        },
    }
    Ok(cfg)
}

/// Runs `template` once per value on at most `jobs` threads. Rows keep the
/// order of `values`; a failing run is recorded in its row.
pub fn sweep(template: &RunConfig, param: SweepParam, values: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let configs: Vec<Result<RunConfig>> = values.iter().map(|v| with_param(template, param, *v)).collect();
    // Tables are shared by every run with the same kernel.
    let mut tables: HashMap<u64, KernelTables> = HashMap::new();
    for cfg in configs.iter().flatten() {
        let key = cfg.kernel.hash64();
        if let std::collections::hash_map::Entry::Vacant(e) = tables.entry(key) {
            e.insert(KernelTables::new(cfg.kernel.clone(), cfg.dr)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::numerical(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .map(|(cfg, value)| {
                let outcome = cfg
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|c| run_with_tables(c, &tables[&c.kernel.hash64()]).map_err(|e| e.to_string()));
                match outcome {
                    Ok(tr) => SweepRow {
                        value: *value,
                        verdict: Some(tr.verdict),
                        h_final: Some(tr.final_state.h),
                        t_final: Some(tr.final_state.t),
                        speed_est: speed_estimate(&tr),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        value: *value,
                        verdict: None,
                        h_final: None,
                        t_final: None,
                        speed_est: None,
                        error: Some(e),
                    },
                }
            })
            .collect()
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn linear_is_exact() {
        let t = grid(0.0, 100.0, 201);
        let h: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
        let f = estimate_speed(&t, &h, FitWindow::default()).unwrap();
        assert!((f.coefficient - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn speed_with_log_lag_stays_in_analytic_range() {
        let t = grid(0.0, 200.0, 2001);
        let h: Vec<f64> = t.iter().map(|t| 2.0 * t - 3.0 * (t + 1.0).ln() + 5.0).collect();
        let f = estimate_speed(&t, &h, FitWindow::Range(100.0, 200.0)).unwrap();
        // h' = 2 - 3/(t+1) lies in (1.97, 1.986) on the window.
        assert!(f.coefficient > 1.94 && f.coefficient < 2.0, "{}", f.coefficient);
    }

    #[test]
    fn log_shift_is_exact_and_flags_constant_lag() {
        let t = grid(1.0, 400.0, 400);
        let h: Vec<f64> = t.iter().map(|t| 2.0 * t - 3.0 * t.ln()).collect();
        let f = estimate_log_shift(&t, &h, 2.0, FitWindow::default()).unwrap();
        assert!((f.coefficient - 3.0).abs() < 1e-10);
        assert!(f.intercept.abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.flag.is_none());

        let h: Vec<f64> = t.iter().map(|t| 2.0 * t - 5.0).collect();
        let f = estimate_log_shift(&t, &h, 2.0, FitWindow::default()).unwrap();
        assert!(f.coefficient.abs() < 1e-9);
        assert!(f.flag.is_some());
    }

    #[test]
    fn power_and_t_log_t_are_exact() {
        let t = grid(10.0, 1000.0, 300);
        let h: Vec<f64> = t.iter().map(|t| 4.0 * t.powf(1.25)).collect();
        let f = estimate_power(&t, &h, FitWindow::default()).unwrap();
        assert!((f.coefficient - 1.25).abs() < 1e-6);
        assert!(f.flag.is_none());

        let t = grid(50.0, 500.0, 300);
        let h: Vec<f64> = t.iter().map(|t| 0.7 * t * t.ln()).collect();
        let f = estimate_t_log_t(&t, &h, FitWindow::Range(50.0, 500.0)).unwrap();
        assert!((f.coefficient - 0.7).abs() < 1e-12);
        assert!(f.spread.unwrap() < 0.05);
    }

    #[test]
    fn short_window_is_rejected() {
        let t = grid(0.0, 1.0, 8);
        let e = estimate_speed(&t, &t, FitWindow::Tail(1.0)).unwrap_err();
        assert!(e.is_model_input());
    }

    #[test]
    fn empty_sweep_is_empty() {
        let cfg = RunConfig::new(
            RadialKernel::uniform(2, 1.0).unwrap(),
            1.0,
            1.0,
            crate::Nonlinearity::logistic(0.5),
            0.4,
        );
        assert!(sweep(&cfg, SweepParam::Mu, &[], 2).unwrap().is_empty());
    }

    #[test]
    fn mu_sweep_switches_once() {
        let mut cfg = RunConfig::new(
            RadialKernel::uniform(2, 1.0).unwrap(),
            1.0,
            1.0,
            crate::Nonlinearity::logistic(0.5),
            0.4,
        );
        cfg.t_end = 300.0;
        cfg.stop_when_decided = true;
        let values = [0.05, 0.3, 1.0, 3.0, 10.0, 30.0, -1.0];
        let rows = sweep(&cfg, SweepParam::Mu, &values, 3).unwrap();
        assert_eq!(rows.len(), values.len());
        assert!(rows[6].error.is_some());
        let v: Vec<Verdict> = rows[..6].iter().map(|r| r.verdict.unwrap()).collect();
        assert_eq!(v[0], Verdict::Vanishing);
        assert_eq!(v[5], Verdict::Spreading);
        assert!(v.iter().all(|x| *x != Verdict::Undecided), "{v:?}");
        assert_eq!(v.windows(2).filter(|w| w[0] != w[1]).count(), 1, "{v:?}");
        for (r, x) in rows.iter().zip(values) {
            assert_eq!(r.value, x);
        }
    }
}
