//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment. Unknown keys are rejected so
//! typos do not silently fall back to defaults.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `N` | space dimension | 2 |
//! | `kernel.kind` | `uniform`, `parabolic` or `power_tail` | `uniform` |
//! | `kernel.radius` | support radius of compact kernels | 1 |
//! | `kernel.beta` | tail exponent of `power_tail` | required for `power_tail` |
//! | `kernel.scale` | core radius of `power_tail` | 1 |
//! | `d`, `mu` | dispersal rate, boundary coefficient | 1, 1 |
//! | `f.kind` | `logistic` or `tabulated` | `logistic` |
//! | `f.scale` | `f'(0)` of the logistic term | 1 |
//! | `f.capacity` | `u*` of the logistic term | 1 |
//! | `f.points` | `u:f` pairs for `tabulated`, comma separated | |
//! | `h0` | initial radius | 2 |
//! | `u0.amplitude` | `A` in `A(1 - (r/h0)^p)` | 1 |
//! | `u0.exponent` | `p` | 2 |
//! | `dr`, `dt` | grid step, time step (`auto` or omitted: stable default) | 0.05, auto |
//! | `t_end` | final time | 100 |
//! | `scheme` | `euler` or `heun` | `euler` |
//! | `record_stride` | steps between trajectory records | 10 |
//! | `snapshot_stride` | records between profile snapshots, 0 for none | 0 |
//! | `stop_when_decided` | stop at the first verdict | false |
//! | `classify.eps_h`, `classify.eps_u`, `classify.window`, `classify.min_records` | vanishing thresholds | 1e-5, 1e-3, 0.1, 20 |
//! | `out_dir` | output directory | `out` |
//! | `semiwave.dx`, `semiwave.truncation`, `semiwave.max_truncation` | semi-wave grid | auto, auto, 400 |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::RadialKernel;
use crate::nonlinearity::Nonlinearity;
use crate::semiwave::SemiWaveOptions;
use crate::solver::{InitialData, RunConfig, Thresholds, TimeScheme};

pub const KEYS: &[&str] = &[
    "N",
    "kernel.kind",
    "kernel.radius",
    "kernel.beta",
    "kernel.scale",
    "d",
    "mu",
    "f.kind",
    "f.scale",
    "f.capacity",
    "f.points",
    "h0",
    "u0.amplitude",
    "u0.exponent",
    "dr",
    "dt",
    "t_end",
    "scheme",
    "record_stride",
    "snapshot_stride",
    "stop_when_decided",
    "classify.eps_h",
    "classify.eps_u",
    "classify.window",
    "classify.min_records",
    "out_dir",
    "semiwave.dx",
    "semiwave.truncation",
    "semiwave.max_truncation",
];

/// Parsed entries in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if cfg.entries.contains_key(k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                e => e,
            })?;
        }
        Ok(cfg)
    }
}

impl Config {
    /// Reads a file; I/O failures surface as [`Error::Io`].
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    /// Sets or overrides one entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// All explicit entries, for manifests.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid value"))),
        }
    }

    fn optional_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None | Some("auto") => Ok(None),
            Some(_) => self.parse(key, 0.0).map(Some),
        }
    }

    pub fn dim(&self) -> Result<usize> {
        self.parse("N", 2)
    }

    pub fn kernel(&self) -> Result<RadialKernel> {
        let dim = self.dim()?;
        match self.get("kernel.kind").unwrap_or("uniform") {
            "uniform" | "disc" | "ball" => RadialKernel::uniform(dim, self.parse("kernel.radius", 1.0)?),
            "parabolic" => RadialKernel::parabolic(dim, self.parse("kernel.radius", 1.0)?),
            "power_tail" => {
                let beta = self
                    .optional_f64("kernel.beta")?
                    .ok_or_else(|| Error::Config("kernel.beta is required for power_tail".into()))?;
                RadialKernel::power_tail(dim, beta, self.parse("kernel.scale", 1.0)?)
            }
            other => Err(Error::Config(format!("unknown kernel.kind {other:?}"))),
        }
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        match self.get("f.kind").unwrap_or("logistic") {
            "logistic" => Ok(Nonlinearity::Logistic {
                rate: self.parse("f.scale", 1.0)?,
                capacity: self.parse("f.capacity", 1.0)?,
            }),
            "tabulated" => {
                let spec = self
                    .get("f.points")
                    .ok_or_else(|| Error::Config("f.points is required for tabulated f".into()))?;
                let points = spec
                    .split(',')
                    .map(|p| {
                        let (u, f) = p
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("f.points entry {p:?} is not u:f")))?;
                        let num = |s: &str| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::Config(format!("f.points entry {p:?} is not numeric")))
                        };
                        Ok((num(u)?, num(f)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Nonlinearity::Tabulated { points })
            }
            other => Err(Error::Config(format!("unknown f.kind {other:?}"))),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::new(
            self.kernel()?,
            self.parse("d", 1.0)?,
            self.parse("mu", 1.0)?,
            self.nonlinearity()?,
            self.parse("h0", 2.0)?,
        );
        rc.u0 = InitialData::Power {
            amplitude: self.parse("u0.amplitude", 1.0)?,
            exponent: self.parse("u0.exponent", 2.0)?,
        };
        rc.dr = self.parse("dr", rc.dr)?;
        rc.dt = self.optional_f64("dt")?;
        rc.t_end = self.parse("t_end", rc.t_end)?;
        rc.scheme = match self.get("scheme").unwrap_or("euler") {
            "euler" => TimeScheme::Euler,
            "heun" => TimeScheme::Heun,
            other => return Err(Error::Config(format!("unknown scheme {other:?}"))),
        };
        rc.record_every = self.parse("record_stride", rc.record_every)?;
        rc.snapshot_every = self.parse("snapshot_stride", rc.snapshot_every)?;
        rc.stop_when_decided = self.parse("stop_when_decided", false)?;
        let th = Thresholds::default();
        rc.thresholds = Thresholds {
            eps_h_rel: self.parse("classify.eps_h", th.eps_h_rel)?,
            eps_u_rel: self.parse("classify.eps_u", th.eps_u_rel)?,
            window_frac: self.parse("classify.window", th.window_frac)?,
            min_records: self.parse("classify.min_records", th.min_records)?,
        };
        Ok(rc)
    }

    pub fn semiwave_options(&self) -> Result<SemiWaveOptions> {
        let mut o = SemiWaveOptions::default();
        o.dx = self.optional_f64("semiwave.dx")?;
        o.truncation = self.optional_f64("semiwave.truncation")?;
        o.max_truncation = self.parse("semiwave.max_truncation", o.max_truncation)?;
        Ok(o)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir").unwrap_or("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelKind;

    #[test]
    fn parses_comments_and_defaults() {
        let c: Config = "# reference run\nN = 2\nkernel.kind=uniform\nmu = 2.5 # faster\n\ndt = auto\n"
            .parse()
            .unwrap();
        let rc = c.run_config().unwrap();
        assert_eq!(rc.mu, 2.5);
        assert_eq!(rc.h0, 2.0);
        assert!(rc.dt.is_none());
        assert_eq!(rc.kernel.dim(), 2);
        rc.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!("mu_typo = 1".parse::<Config>(), Err(Error::Config(_))));
        assert!(matches!("mu 1".parse::<Config>(), Err(Error::Config(_))));
        assert!(matches!("mu = 1\nmu = 2".parse::<Config>(), Err(Error::Config(_))));
        let c: Config = "mu = fast".parse().unwrap();
        assert!(c.run_config().unwrap_err().is_model_input());
        let c: Config = "kernel.kind = power_tail".parse().unwrap();
        assert!(c.kernel().is_err());
    }

    #[test]
    fn fat_tail_and_tabulated() {
        let c: Config = "kernel.kind = power_tail\nkernel.beta = 2.5\nf.kind = tabulated\nf.points = 0:0, 0.5:0.25, 1:0, 2:-2"
            .parse()
            .unwrap();
        assert!(matches!(c.kernel().unwrap().kind(), KernelKind::FatTail { beta, .. } if *beta == 2.5));
        let f = c.nonlinearity().unwrap();
        f.validate().unwrap();
        assert_eq!(f.carrying_capacity(), 1.0);
    }
}
