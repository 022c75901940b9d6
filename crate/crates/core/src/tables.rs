//! Cached discretizations of `J̃(r_i, ρ)` on a uniform radial grid.
//!
//! Row `i` belongs to the node `r_i = i·dr` and stores, over a contiguous
//! column range,
//!
//! * point values `J̃(r_i, ρ_j)` (used by trapezoid rules),
//! * per-cell moments of `J̃(r_i, ·)` against the two linear hat halves, so
//!   that `∫ J̃(r_i, ρ) u(ρ) dρ` is exact for piecewise-linear `u`,
//! * cumulative masses `∫_0^{ρ_j} J̃(r_i, ρ) dρ`.
//!
//! For compactly supported kernels a row is complete once it spans
//! `[r_i - K★, r_i + K★]`. For algebraic tails rows are dense and are
//! extended to the right whenever the grid outgrows them.
//!
//! Rows are filled lazily under a write lock; readers share completed rows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::{RwLock, RwLockReadGuard};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::RadialKernel;
use crate::quadrature::{self, GaussLegendre};

pub const MAGIC: &[u8; 8] = b"NLFBKT1\0";
/// Angular Gauss–Legendre order per panel for table entries.
pub const THETA_ORDER: usize = 16;
/// Radial Gauss–Legendre order per cell piece for table entries.
pub const RHO_ORDER: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    start: usize,
    point: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    cum: Vec<f64>,
}

impl Row {
    /// First node index covered.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last node index covered.
    pub fn end(&self) -> usize {
        self.start + self.left.len()
    }

    /// `J̃(r_i, ρ_j)`; zero outside the stored range.
    pub fn jtilde(&self, j: usize) -> f64 {
        if j < self.start {
            return 0.0;
        }
        self.point.get(j - self.start).copied().unwrap_or(0.0)
    }

    /// `∫_0^{ρ_j} J̃(r_i, ρ) dρ`. Past the end of the row this is the row's
    /// total, which is the full mass for a compact kernel.
    pub fn cum_mass(&self, j: usize) -> f64 {
        if j < self.start {
            return 0.0;
        }
        let k = (j - self.start).min(self.cum.len() - 1);
        self.cum[k]
    }

    /// Cell `[ρ_c, ρ_{c+1}]` moments `(left, right)`: the weights that the
    /// cell contributes to nodes `c` and `c + 1` for linear interpolation.
    #[inline]
    pub fn cell(&self, c: usize) -> (f64, f64) {
        if c < self.start || c >= self.end() {
            return (0.0, 0.0);
        }
        let k = c - self.start;
        (self.left[k], self.right[k])
    }

    /// Range of cells with nonzero moments.
    pub fn cells(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

struct Store {
    rows: Vec<Row>,
    /// Column horizon (last node) of dense rows; unused for compact kernels.
    horizon: usize,
}

/// Lazily filled tables of `J̃` for one kernel and grid step.
pub struct KernelTables {
    kernel: RadialKernel,
    dr: f64,
    band: Option<usize>,
    store: RwLock<Store>,
    theta_rule: std::sync::Arc<GaussLegendre>,
    rho_rule: std::sync::Arc<GaussLegendre>,
}

impl std::fmt::Debug for KernelTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.store.read();
        f.debug_struct("KernelTables")
            .field("kernel", &self.kernel.label())
            .field("dr", &self.dr)
            .field("rows", &s.rows.len())
            .field("horizon", &s.horizon)
            .finish()
    }
}

/// Read access to completed rows.
pub struct TablesRead<'a> {
    guard: RwLockReadGuard<'a, Store>,
    compact: bool,
}

impl TablesRead<'_> {
    pub fn row(&self, i: usize) -> &Row {
        &self.guard.rows[i]
    }

    /// Last node covered by dense rows (0 for compact kernels).
    pub fn horizon(&self) -> usize {
        self.guard.horizon
    }

    pub fn len(&self) -> usize {
        self.guard.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.guard.rows.is_empty()
    }

    /// `T(r_i, ρ_j) = 1 - ∫_0^{ρ_j} J̃(r_i, ρ) dρ`, clamped to `[0, 1]`.
    pub fn tail_mass(&self, i: usize, j: usize) -> f64 {
        let row = self.row(i);
        if j > row.end() {
            assert!(self.compact, "column {j} beyond the dense row horizon {}", row.end());
            return 0.0;
        }
        (1.0 - row.cum_mass(j)).clamp(0.0, 1.0)
    }
}

impl KernelTables {
    pub fn new(kernel: RadialKernel, dr: f64) -> Result<Self> {
        if !(dr > 0.0 && dr.is_finite()) {
            return Err(Error::invalid(format!("grid step dr = {dr} must be positive")));
        }
        let band = kernel
            .support()
            .map(|k| (k / dr - 1e-12).ceil() as usize + 1);
        Ok(Self {
            kernel,
            dr,
            band,
            store: RwLock::new(Store {
                rows: Vec::new(),
                horizon: 0,
            }),
            theta_rule: quadrature::rule(THETA_ORDER),
            rho_rule: quadrature::rule(RHO_ORDER),
        })
    }

    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    /// Half-width of compact rows in nodes, `None` for dense rows.
    pub fn band(&self) -> Option<usize> {
        self.band
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }

    pub fn rows(&self) -> usize {
        self.store.read().rows.len()
    }

    pub fn read(&self) -> TablesRead<'_> {
        TablesRead {
            guard: self.store.read(),
            compact: self.band.is_some(),
        }
    }

    /// Makes rows `0..=max_node` available, each covering every column a
    /// grid ending at `max_node` can touch.
    pub fn ensure(&self, max_node: usize) {
        {
            let s = self.store.read();
            if s.rows.len() > max_node && (self.band.is_some() || s.horizon >= max_node) {
                return;
            }
        }
        let mut s = self.store.write();
        match self.band {
            Some(band) => {
                let have = s.rows.len();
                if have <= max_node {
                    let new: Vec<Row> = (have..=max_node)
                        .into_par_iter()
                        .map(|i| self.compute_row(i, i.saturating_sub(band), i + band))
                        .collect();
                    s.rows.extend(new);
                }
            }
            None => {
                let horizon = if s.horizon < max_node {
                    max_node.max(s.horizon + s.horizon / 4 + 8)
                } else {
                    s.horizon
                };
                let have = s.rows.len();
                s.rows.extend((have..=max_node).map(|_| Row::default()));
                s.rows.par_iter_mut().enumerate().for_each(|(i, row)| {
                    if row.point.is_empty() {
                        *row = self.compute_row(i, 0, horizon);
                    } else if row.end() < horizon {
                        self.push_cells(row, self.node(i), row.end(), horizon);
                    }
                });
                s.horizon = horizon;
            }
        }
    }

    /// Moments of `J̃(r, ·)` on `[a, b]` at table accuracy; see
    /// [`RadialKernel::j_tilde_cell_moments`].
    pub fn cell_moments(&self, r: f64, a: f64, b: f64) -> (f64, f64) {
        self.kernel
            .j_tilde_cell_moments(r, a, b, &self.rho_rule, &self.theta_rule)
    }

    /// `J̃(r, ρ)` at table accuracy.
    pub fn jtilde_at(&self, r: f64, rho: f64) -> f64 {
        self.kernel.j_tilde_with(r, rho, &self.theta_rule)
    }

    fn compute_row(&self, i: usize, first: usize, last: usize) -> Row {
        let r = self.node(i);
        let mut row = Row {
            start: first,
            point: vec![self.jtilde_at(r, self.node(first))],
            left: Vec::with_capacity(last - first),
            right: Vec::with_capacity(last - first),
            cum: vec![0.0],
        };
        // Compact rows start where J̃(r_i, ·) is still zero, so the mass
        // below `first` vanishes.
        self.push_cells(&mut row, r, first, last);
        row
    }

    fn push_cells(&self, row: &mut Row, r: f64, from: usize, to: usize) {
        for c in from..to {
            let a = self.node(c);
            let b = self.node(c + 1);
            let (m0, m1) = self.cell_moments(r, a, b);
            row.left.push(m0 - m1);
            row.right.push(m1);
            let prev = *row.cum.last().unwrap();
            row.cum.push(prev + m0);
            row.point.push(self.jtilde_at(r, b));
        }
    }

    /// Cache file name for this kernel and grid step inside `dir`.
    pub fn cache_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!(
            "{:016x}_N{}_dr{:016x}.nlfbkt",
            self.kernel.hash64(),
            self.kernel.dim(),
            self.dr.to_bits()
        ))
    }

    /// Writes all completed rows.
    ///
    /// Layout, all little endian: magic `NLFBKT1\0`, `u64` N, `f64` dr,
    /// `u64` kernel hash, `u64` row count, `u64` column horizon; then per row
    /// `u64` start, `u64` cell count `m`, and `f64` arrays point `[m+1]`,
    /// left `[m]`, right `[m]`, cumulative mass `[m+1]`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = self.store.read();
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.kernel.dim() as u64).to_le_bytes())?;
        w.write_all(&self.dr.to_le_bytes())?;
        w.write_all(&self.kernel.hash64().to_le_bytes())?;
        w.write_all(&(s.rows.len() as u64).to_le_bytes())?;
        w.write_all(&(s.horizon as u64).to_le_bytes())?;
        for row in &s.rows {
            w.write_all(&(row.start as u64).to_le_bytes())?;
            w.write_all(&(row.left.len() as u64).to_le_bytes())?;
            for v in row.point.iter().chain(&row.left).chain(&row.right).chain(&row.cum) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads rows written by [`save`](Self::save) for the same kernel and
    /// step, replacing the in-memory rows.
    pub fn load(&self, path: &Path) -> Result<()> {
        let mut rd = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        rd.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Cache(format!("{}: bad magic", path.display())));
        }
        let dim = read_u64(&mut rd)? as usize;
        let dr = f64::from_bits(read_u64(&mut rd)?);
        let hash = read_u64(&mut rd)?;
        if dim != self.kernel.dim() || dr.to_bits() != self.dr.to_bits() || hash != self.kernel.hash64() {
            return Err(Error::Cache(format!(
                "{}: header (N={dim}, dr={dr}, hash={hash:016x}) does not match",
                path.display()
            )));
        }
        let nrows = read_u64(&mut rd)? as usize;
        let horizon = read_u64(&mut rd)? as usize;
        let mut rows = Vec::with_capacity(nrows);
        for _ in 0..nrows {
            let start = read_u64(&mut rd)? as usize;
            let m = read_u64(&mut rd)? as usize;
            let point = read_f64s(&mut rd, m + 1)?;
            let left = read_f64s(&mut rd, m)?;
            let right = read_f64s(&mut rd, m)?;
            let cum = read_f64s(&mut rd, m + 1)?;
            rows.push(Row {
                start,
                point,
                left,
                right,
                cum,
            });
        }
        let mut s = self.store.write();
        s.rows = rows;
        s.horizon = horizon;
        Ok(())
    }

    /// Tables backed by `dir`: rows are loaded when a matching file exists.
    pub fn open_cached(kernel: RadialKernel, dr: f64, dir: &Path) -> Result<Self> {
        let t = Self::new(kernel, dr)?;
        let path = t.cache_path(dir);
        if path.exists() {
            if let Err(e) = t.load(&path) {
                log::warn!("ignoring kernel table cache: {e}");
            }
        }
        Ok(t)
    }

    /// Writes the tables into `dir` under [`cache_path`](Self::cache_path).
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = self.cache_path(dir);
        self.save(&path)?;
        Ok(path)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f64::from_bits(read_u64(r)?));
    }
    Ok(out)
}
