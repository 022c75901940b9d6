//! The radial nonlocal operator `u ↦ ∫_0^h J̃(r, ρ)u(ρ)dρ` on a ball whose
//! radius `h` need not be a grid node.
//!
//! Values live on the nodes `r_0..r_m` (with `r_m < h`) and at `h` itself;
//! `u` is interpolated linearly, so full cells use the table moments and the
//! partial cell `[r_m, h]` is integrated on the fly.

use rayon::prelude::*;

use crate::tables::KernelTables;

/// Row work above which `apply` runs on the thread pool.
const PAR_WORK: usize = 1 << 17;

pub(crate) struct RadialOperator<'a> {
    tables: &'a KernelTables,
    h: f64,
    m: usize,
    /// `(left, right)` moments of the partial cell for rows `0..=m`.
    partial: Vec<(f64, f64)>,
    /// Mass of `J̃(r_i, ·)` on `[r_m, h]`.
    partial_mass: Vec<f64>,
}

/// Index of the last node strictly inside `[0, h)`.
pub(crate) fn last_node(dr: f64, h: f64) -> usize {
    let x = h / dr;
    let mut m = x.floor() as usize;
    if (m as f64) * dr >= h - 1e-12 * dr.max(h) && m > 0 {
        m -= 1;
    }
    m
}

impl<'a> RadialOperator<'a> {
    pub fn new(tables: &'a KernelTables, h: f64) -> Self {
        let m = last_node(tables.dr(), h);
        tables.ensure(m + 1);
        let mut op = Self {
            tables,
            h,
            m,
            partial: Vec::new(),
            partial_mass: Vec::new(),
        };
        op.refresh_partial();
        op
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Moves the boundary to `h`; returns the new last interior node.
    pub fn set_h(&mut self, h: f64) -> usize {
        self.h = h;
        let m = last_node(self.tables.dr(), h);
        if m != self.m {
            self.m = m;
            self.tables.ensure(m + 1);
        }
        self.refresh_partial();
        m
    }

    fn refresh_partial(&mut self) {
        let t = self.tables;
        let dr = t.dr();
        let m = self.m;
        let rm = t.node(m);
        let delta = self.h - rm;
        let support = t.kernel().support();
        // Rows farther than this from the cell see a smooth J̃ there.
        let exact_reach = support.unwrap_or(0.0).max(t.kernel().length_scale()) + 2.0 * dr;
        let rd = t.read();
        self.partial.clear();
        self.partial_mass.clear();
        for i in 0..=m {
            let r = t.node(i);
            let gap = rm - r;
            let (m0, m1) = if support.is_some_and(|k| gap >= k + dr) {
                (0.0, 0.0)
            } else if gap <= exact_reach {
                t.cell_moments(r, rm, self.h)
            } else {
                // Linear interpolation of the tabulated point values.
                let row = rd.row(i);
                let (p0, p1) = (row.jtilde(m), row.jtilde(m + 1));
                let slope = (p1 - p0) / dr;
                let m0 = p0 * delta + 0.5 * slope * delta * delta;
                let m1 = 0.5 * p0 * delta + slope * delta * delta / 3.0;
                (m0, m1)
            };
            self.partial.push((m0 - m1, m1));
            self.partial_mass.push(m0);
        }
    }

    /// `out[i] = ∫_0^h J̃(r_i, ρ)u(ρ)dρ` for `i ≤ m`, where `u` holds node
    /// values `0..=m` and `u_h` is the value at `h`.
    pub fn apply(&self, u: &[f64], u_h: f64, out: &mut [f64]) {
        let rd = self.tables.read();
        let m = self.m;
        let row_value = |i: usize| {
            let row = rd.row(i);
            let cells = row.cells();
            let mut acc = 0.0;
            for c in cells.start..cells.end.min(m) {
                let (l, r) = row.cell(c);
                acc += l * u[c] + r * u[c + 1];
            }
            let (pl, pr) = self.partial[i];
            acc + pl * u[m] + pr * u_h
        };
        let width = self.tables.band().map_or(m + 1, |b| 2 * b + 1);
        if (m + 1) * width >= PAR_WORK {
            out[..=m]
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = row_value(i));
        } else {
            for (i, o) in out[..=m].iter_mut().enumerate() {
                *o = row_value(i);
            }
        }
    }

    /// `∫_0^h J̃(r_i, ρ)dρ`.
    pub fn inner_mass(&self, i: usize) -> f64 {
        let rd = self.tables.read();
        rd.row(i).cum_mass(self.m) + self.partial_mass[i]
    }

    /// `T(r_i, h) = 1 - ∫_0^h J̃(r_i, ρ)dρ`, clamped to `[0, 1]`.
    pub fn tail(&self, i: usize) -> f64 {
        (1.0 - self.inner_mass(i)).clamp(0.0, 1.0)
    }

    /// Row of the operator at `r = h`: `∫_0^h J̃(h, ρ)u(ρ)dρ`.
    pub fn boundary_row(&self) -> (Vec<(f64, f64)>, (f64, f64)) {
        let t = self.tables;
        let cells = (0..self.m)
            .map(|c| {
                let (m0, m1) = t.cell_moments(self.h, t.node(c), t.node(c + 1));
                (m0 - m1, m1)
            })
            .collect();
        let (m0, m1) = t.cell_moments(self.h, t.node(self.m), self.h);
        (cells, (m0 - m1, m1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RadialKernel;

    #[test]
    fn last_node_is_strictly_inside() {
        assert_eq!(last_node(0.1, 0.35), 3);
        assert_eq!(last_node(0.1, 0.3), 2);
        assert_eq!(last_node(0.5, 4.0), 7);
        assert_eq!(last_node(0.5, 0.2), 0);
    }

    #[test]
    fn constant_is_reproduced_deep_inside() {
        let t = KernelTables::new(RadialKernel::uniform(2, 1.0).unwrap(), 0.1).unwrap();
        let op = RadialOperator::new(&t, 6.37);
        let m = op.m();
        let u = vec![1.0; m + 1];
        let mut out = vec![0.0; m + 1];
        op.apply(&u, 1.0, &mut out);
        for (i, v) in out.iter().enumerate() {
            assert!((v - op.inner_mass(i)).abs() < 1e-12);
            if t.node(i) + 1.0 < 6.37 {
                assert!((v - 1.0).abs() < 1e-9, "node {i}: {v}");
            }
        }
        assert!(op.tail(m) > 0.4);
    }
}
