//! Preconditioned conjugate gradients for the cell-centered pressure system.
//!
//! The matrix is `diag(d) + sum_f c_f (e_a - e_b)(e_a - e_b)^T` over faces: a
//! weighted graph Laplacian plus a positive diagonal, hence symmetric positive
//! definite. The preconditioner solves each vertical column exactly (tridiagonal)
//! and ignores lateral coupling, which suits thin layered grids where vertical
//! transmissibilities dominate.

use crate::error::{CoreError, Result};

pub struct PressureMatrix {
    pub diag: Vec<f64>,
    /// `(a, b, c)` with `c >= 0`.
    pub links: Vec<(usize, usize, f64)>,
}

impl PressureMatrix {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, (d, xi)) in y.iter_mut().zip(self.diag.iter().zip(x)) {
            *yi = d * xi;
        }
        for &(a, b, c) in &self.links {
            let f = c * (x[a] - x[b]);
            y[a] += f;
            y[b] -= f;
        }
    }
}

/// Cell `c` of layer `k` in column `col` is `col + k * n_columns`.
pub struct ColumnLayout {
    pub n_columns: usize,
    pub nz: usize,
}

struct ColumnPrecond {
    nz: usize,
    n_columns: usize,
    /// Coupling of cell `c` with `c + n_columns`, zero when absent.
    below: Vec<f64>,
    /// Thomas factors: eliminated diagonal and sub-diagonal multipliers.
    denom: Vec<f64>,
    lower: Vec<f64>,
}

impl ColumnPrecond {
    fn new(m: &PressureMatrix, layout: &ColumnLayout) -> Self {
        let n = m.diag.len();
        let nc = layout.n_columns;
        let mut full_diag = m.diag.clone();
        let mut below = vec![0.0; n];
        for &(a, b, c) in &m.links {
            full_diag[a] += c;
            full_diag[b] += c;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi == lo + nc {
                below[lo] = -c;
            }
        }
        let mut denom = vec![0.0; n];
        let mut lower = vec![0.0; n];
        for col in 0..nc {
            denom[col] = full_diag[col];
            for k in 1..layout.nz {
                let (c, p) = (col + k * nc, col + (k - 1) * nc);
                lower[c] = below[p] / denom[p];
                denom[c] = full_diag[c] - lower[c] * below[p];
            }
        }
        Self { nz: layout.nz, n_columns: nc, below, denom, lower }
    }

    fn solve(&self, r: &[f64], z: &mut [f64]) {
        let nc = self.n_columns;
        for col in 0..nc {
            for k in 0..self.nz {
                let c = col + k * nc;
                z[c] = if k == 0 { r[c] } else { r[c] - self.lower[c] * z[c - nc] };
            }
            for k in (0..self.nz).rev() {
                let c = col + k * nc;
                let up = if k + 1 < self.nz { self.below[c] * z[c + nc] } else { 0.0 };
                z[c] = (z[c] - up) / self.denom[c];
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `m x = b` to `||r|| <= max(rtol ||b||, atol)`; `x` holds the initial guess.
pub fn pcg(
    m: &PressureMatrix,
    layout: &ColumnLayout,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    atol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let b_norm = norm(b);
    let target = (rtol * b_norm).max(atol);
    let pre = ColumnPrecond::new(m, layout);
    let mut r = vec![0.0; n];
    m.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm(&r);
    if res <= target {
        return Ok(SolveStats { iterations: 0, residual: res / b_norm.max(f64::MIN_POSITIVE) });
    }
    let mut z = vec![0.0; n];
    pre.solve(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        m.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= target {
            return Ok(SolveStats { iterations: it, residual: res / b_norm.max(f64::MIN_POSITIVE) });
        }
        pre.solve(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CoreError::SolverDiverged { residual: res / b_norm.max(f64::MIN_POSITIVE), iterations: max_iter })
}
