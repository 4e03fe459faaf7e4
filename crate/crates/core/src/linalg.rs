//! Symmetric positive definite banded matrices and their Cholesky solve.
//!
//! Both the neck solver (tensor grid, nine-point stencil) and the weighted disk
//! solver (polar grid, five-point stencil with periodic wrap) produce SPD systems
//! whose bandwidth is one grid line, so a banded direct factorization is cheap
//! and insensitive to the strong anisotropy of thin gaps.

use crate::error::{Error, Result};

/// Lower-band storage of a symmetric matrix: `band[i * (bw + 1) + k]` holds
/// `A[i][i - k]` for `k = 0..=bw`.
#[derive(Debug, Clone)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to `A[i][j]` (and, implicitly, `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let k = self.idx(r, c);
        self.band[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.band[self.idx(r, c)]
        }
    }

    /// Replaces row and column `i` by the identity row (Dirichlet elimination
    /// after the right-hand side has been lifted).
    pub fn set_identity_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.band[k] = 0.0;
        }
        let hi = (i + self.bw).min(self.n - 1);
        for r in (i + 1)..=hi {
            let k = self.idx(r, i);
            self.band[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.band[k] = 1.0;
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.band[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for j in lo..i {
                let a = row[i - j];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
    }

    /// In-place banded Cholesky `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - sum_k L[i][k] L[j][k]) / L[j][j]
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (i - j)];
                for k in klo..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::LinearBreakdown(format!(
                            "non-positive pivot {s:.3e} at row {i} of {n}"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for k in lo..i {
                s -= self.l[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for k in (i + 1)..=hi {
                s -= self.l[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.l[i * w];
        }
    }
}

/// Outcome of [`solve_spd`].
#[derive(Debug, Clone, Copy)]
pub struct LinearSolveInfo {
    pub refinements: usize,
    pub relative_residual: f64,
}

/// Target relative residual of every linear solve.
pub const LINEAR_TOL: f64 = 1e-10;

/// Solves `A x = b` by banded Cholesky followed by iterative refinement until
/// `‖b − A x‖₂ ≤ LINEAR_TOL · ‖b‖₂`.
pub fn solve_spd(a: &SymBandMatrix, b: &[f64]) -> Result<(Vec<f64>, LinearSolveInfo)> {
    let n = a.dim();
    let chol = a.cholesky()?;
    let bnorm = norm2(b);
    let mut x = b.to_vec();
    chol.solve_in_place(&mut x);
    if bnorm == 0.0 {
        return Ok((
            x,
            LinearSolveInfo {
                refinements: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut ax = vec![0.0; n];
    let mut refinements = 0;
    loop {
        a.mul_vec(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::LinearBreakdown(
                "non-finite residual in banded solve".into(),
            ));
        }
        if rel <= LINEAR_TOL || refinements >= 4 {
            if rel > LINEAR_TOL {
                return Err(Error::LinearBreakdown(format!(
                    "relative residual {rel:.3e} above {LINEAR_TOL:.0e} after {refinements} refinements"
                )));
            }
            return Ok((
                x,
                LinearSolveInfo {
                    refinements,
                    relative_residual: rel,
                },
            ));
        }
        chol.solve_in_place(&mut r);
        x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        refinements += 1;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
