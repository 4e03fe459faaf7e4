//! Weighted reduction for `d = 3`, `p = 2`: the disk equation
//! `div(a|x′|²∇v) = 0` and the first nonzero eigenvalue of
//! `−(a u′)′ = λ a u` on the circle.
//!
//! Separating `v = r^α Θ(θ)` gives `(aΘ′)′ + α(α+2) a Θ = 0`, so
//! `α = −1 + √(1+λ₁)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::{solve_spd, SymBandMatrix};

/// Trigonometric polynomial `a₀ + Σ cₖ cos kθ + sₖ sin kθ`, `k ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSeries {
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn constant(a0: f64) -> Self {
        Self {
            a0,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    /// `a0 + amplitude·cos(kθ)`.
    pub fn cosine(a0: f64, k: usize, amplitude: f64) -> Self {
        let mut cos = vec![0.0; k];
        cos[k - 1] = amplitude;
        Self {
            a0,
            cos,
            sin: Vec::new(),
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut v = self.a0;
        for (k, c) in self.cos.iter().enumerate() {
            v += c * ((k + 1) as f64 * theta).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            v += s * ((k + 1) as f64 * theta).sin();
        }
        v
    }

    fn validate(&self) -> Result<()> {
        if !self.a0.is_finite() || self.cos.iter().chain(&self.sin).any(|c| !c.is_finite()) {
            return param("Fourier coefficients must be finite");
        }
        Ok(())
    }
}

/// Weight `a(x′) = a(θ)` on the unit disk; its trace on the circle is the
/// same series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFunction {
    pub series: FourierSeries,
    /// Claimed bound `κ⁻¹ ≤ a ≤ κ`.
    pub kappa: f64,
    /// Claimed bound on `|v|`.
    pub sup_bound: f64,
}

impl WeightFunction {
    pub fn new(series: FourierSeries, kappa: f64, sup_bound: f64) -> Self {
        Self {
            series,
            kappa,
            sup_bound,
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.series.eval(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub quad_n: usize,
    pub min_a: f64,
    pub max_a: f64,
    pub int_cos: f64,
    pub int_sin: f64,
    /// Smallest `κ` with `κ⁻¹ ≤ a ≤ κ` on the samples.
    pub kappa_observed: f64,
}

/// Tolerance of the orthogonality integrals.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Trapezoidal check of the bounds and of `∫ a cos θ = ∫ a sin θ = 0`.
pub fn check_weight(w: &WeightFunction, quad_n: usize) -> Result<WeightReport> {
    if quad_n < 64 {
        return param(format!("quadrature needs at least 64 nodes, got {quad_n}"));
    }
    w.series.validate()?;
    if !(w.kappa >= 1.0) {
        return param(format!("κ must be at least 1, got {}", w.kappa));
    }
    let h = 2.0 * PI / quad_n as f64;
    let (mut min_a, mut max_a, mut ic, mut is, mut iabs) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for k in 0..quad_n {
        let t = k as f64 * h;
        let a = w.eval(t);
        min_a = min_a.min(a);
        max_a = max_a.max(a);
        ic += a * t.cos() * h;
        is += a * t.sin() * h;
        iabs += a.abs() * h;
    }
    let invalid = |reason: String| Error::InvalidWeight {
        reason,
        int_cos: ic,
        int_sin: is,
        min_a,
        max_a,
    };
    if !(min_a >= 1.0 / w.kappa && max_a <= w.kappa) {
        return Err(invalid(format!("weight leaves [1/κ, κ] with κ = {}", w.kappa)));
    }
    let tol = ORTHOGONALITY_TOL * iabs.max(1.0);
    if ic.abs() > tol || is.abs() > tol {
        return Err(invalid("weight is not orthogonal to the linear functions".into()));
    }
    Ok(WeightReport {
        quad_n,
        min_a,
        max_a,
        int_cos: ic,
        int_sin: is,
        kappa_observed: max_a.max(1.0 / min_a),
    })
}

/// `α = (−(d−1) + √((d−1)² + 4λ₁))/2`.
pub fn alpha_from_lambda(lambda1: f64, d: usize) -> Result<f64> {
    if !(lambda1 > 0.0) || !lambda1.is_finite() {
        return param(format!("λ₁ must be positive, got {lambda1}"));
    }
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let b = (d - 1) as f64;
    // Rationalized form; avoids cancellation for small λ₁.
    Ok(2.0 * lambda1 / (b + (b * b + 4.0 * lambda1).sqrt()))
}

/// `β = (−(d−1) + √((d−1)² + 4(d−2)))/4`, the exponent correction for equal
/// principal curvatures.
pub fn equal_curvature_beta(d: usize) -> f64 {
    let b = (d - 1) as f64;
    (-b + (b * b + 4.0 * (d as f64 - 2.0)).sqrt()) / 4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereEigenResult {
    pub n: usize,
    /// Smallest computed eigenvalue; zero up to rounding (constants).
    pub lambda0: f64,
    pub lambda1: f64,
    /// Next eigenvalue, to expose multiplicity.
    pub lambda2: f64,
    /// Eigenvector of `lambda1` at `θ_k = 2πk/n`, normalized to max 1.
    pub eigenvector: Vec<f64>,
    pub alpha: f64,
}

/// Smallest nonzero eigenvalue of `−(a u′)′ = λ a u` on the periodic circle.
///
/// Stiffness is the conservative three-point form with `a` at half nodes;
/// the mass matrix is the compact fourth-order blend `(a_{k−½}, 10a_k,
/// a_{k+½})/12`, which removes the leading `h²` error of the lumped form.
pub fn sphere_lambda1(w: &WeightFunction, d: usize, n: usize) -> Result<SphereEigenResult> {
    if d != 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    if n < 8 {
        return param(format!("need at least 8 circle nodes, got {n}"));
    }
    check_weight(w, n.max(64))?;
    let h = 2.0 * PI / n as f64;
    let a_node: Vec<f64> = (0..n).map(|k| w.eval(k as f64 * h)).collect();
    let a_half: Vec<f64> = (0..n).map(|k| w.eval((k as f64 + 0.5) * h)).collect();
    let mut kmat = DMatrix::<f64>::zeros(n, n);
    let mut mmat = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let next = (k + 1) % n;
        let c = a_half[k] / (h * h);
        kmat[(k, k)] += c;
        kmat[(next, next)] += c;
        kmat[(k, next)] -= c;
        kmat[(next, k)] -= c;
        mmat[(k, k)] += 10.0 / 12.0 * a_node[k];
        mmat[(k, next)] += a_half[k] / 12.0;
        mmat[(next, k)] += a_half[k] / 12.0;
    }
    let chol = mmat.cholesky().ok_or_else(|| {
        Error::Numeric("mass matrix is not positive definite; the weight varies too fast for this grid".into())
    })?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("singular mass factor".into()))?;
    let mut c = &linv * &kmat * linv.transpose();
    // Exact symmetry for the symmetric solver.
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda_scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lambda0 = eig.eigenvalues[order[0]];
    let back = |idx: usize| -> Vec<f64> {
        let y = eig.eigenvectors.column(idx).into_owned();
        let x = linv.transpose() * y;
        let mx = x.iter().fold(0.0_f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        x.iter().map(|v| v / mx).collect()
    };
    if lambda0.abs() > 1e-9 * lambda_scale {
        return Err(Error::Numeric(format!("smallest eigenvalue {lambda0:e} is not zero")));
    }
    let v0 = back(order[0]);
    if v0.iter().any(|v| (v - 1.0).abs() > 1e-6) {
        return Err(Error::Numeric("null eigenvector is not constant".into()));
    }
    let lambda1 = eig.eigenvalues[order[1]];
    let lambda2 = eig.eigenvalues[order[2]];
    Ok(SphereEigenResult {
        n,
        lambda0,
        lambda1,
        lambda2,
        eigenvector: back(order[1]),
        alpha: alpha_from_lambda(lambda1, d)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiskGrid {
    /// Rings in `s = ln r` between the inner radius and 1.
    pub n_r: usize,
    pub n_theta: usize,
    pub inner_radius: f64,
}

impl Default for DiskGrid {
    fn default() -> Self {
        Self {
            n_r: 160,
            n_theta: 64,
            inner_radius: INNER_RADIUS,
        }
    }
}

/// Radius of the excised core around the degenerate origin.
pub const INNER_RADIUS: f64 = 1e-4;
/// Window of the decay fit.
pub const DECAY_WINDOW: (f64, f64) = (1e-3, 1e-1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub r: f64,
    pub sup_osc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSolveResult {
    pub grid: DiskGrid,
    pub radii: Vec<f64>,
    /// `v[i * n_theta + k]` at radius `radii[i]`, angle `2πk/n_theta`.
    pub v: Vec<f64>,
    /// Value assigned to the origin: the mean over the innermost ring.
    pub v_origin: f64,
    pub decay: Vec<DecaySample>,
    /// Slope of `log sup|v − v(0)|` against `log r` over the fit window;
    /// `None` when the oscillation vanishes there.
    pub alpha_emp: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub max_abs: f64,
    pub linear_relative_residual: f64,
}

/// Solves `div(a r²∇v) = 0` on the annulus `inner_radius < r < 1` with
/// `v = g` on `r = 1` and zero flux on the inner circle.
///
/// In `s = ln r` the equation is `∂ₛ(a e^{2s} vₛ) + e^{2s}(a v_θ)_θ = 0`,
/// discretized by vertex-centered finite volumes on a uniform `(s, θ)` grid.
pub fn solve_weighted_disk(w: &WeightFunction, g: &FourierSeries, grid: DiskGrid) -> Result<WeightedSolveResult> {
    if grid.n_r < 16 || grid.n_theta < 16 {
        return param(format!("disk grid must be at least 16×16, got {}×{}", grid.n_r, grid.n_theta));
    }
    if !(grid.inner_radius > 0.0 && grid.inner_radius < DECAY_WINDOW.0) {
        return param(format!(
            "inner radius must lie in (0, {}), got {}",
            DECAY_WINDOW.0, grid.inner_radius
        ));
    }
    check_weight(w, grid.n_theta.max(64))?;
    g.validate()?;
    let (nr, nt) = (grid.n_r, grid.n_theta);
    let s0 = grid.inner_radius.ln();
    let hs = -s0 / nr as f64;
    let ht = 2.0 * PI / nt as f64;
    let s_at = |i: f64| s0 + i * hs;
    let a_node: Vec<f64> = (0..nt).map(|k| w.eval(k as f64 * ht)).collect();
    let a_half: Vec<f64> = (0..nt).map(|k| w.eval((k as f64 + 0.5) * ht)).collect();
    let g_outer: Vec<f64> = (0..nt).map(|k| g.eval(k as f64 * ht)).collect();

    // Unknown rings i = 0..nr−1; ring nr is the Dirichlet circle.
    let n = nr * nt;
    let idx = |i: usize, k: usize| i * nt + k;
    let mut mat = SymBandMatrix::zeros(n, nt);
    let mut rhs = vec![0.0; n];
    for i in 0..nr {
        let half_cell = if i == 0 { 0.5 } else { 1.0 };
        let e2 = (2.0 * s_at(i as f64)).exp();
        for k in 0..nt {
            // Angular flux through the face between k and k+1.
            let kn = (k + 1) % nt;
            let c = e2 * a_half[k] / ht * hs * half_cell;
            mat.add(idx(i, k), idx(i, k), c);
            mat.add(idx(i, kn), idx(i, kn), c);
            mat.add(idx(i, k), idx(i, kn), -c);
            // Radial flux through the face between rings i and i+1.
            let c = a_node[k] * (2.0 * s_at(i as f64 + 0.5)).exp() / hs * ht;
            mat.add(idx(i, k), idx(i, k), c);
            if i + 1 < nr {
                mat.add(idx(i + 1, k), idx(i + 1, k), c);
                mat.add(idx(i, k), idx(i + 1, k), -c);
            } else {
                rhs[idx(i, k)] += c * g_outer[k];
            }
        }
    }
    // Diagonal scaling keeps the e^{2s} range out of the factorization.
    let scale: Vec<f64> = (0..n).map(|k| 1.0 / mat.get(k, k).sqrt()).collect();
    let mut scaled = SymBandMatrix::zeros(n, nt);
    for r in 0..n {
        for c in r.saturating_sub(nt)..=r {
            let v = mat.get(r, c);
            if v != 0.0 {
                scaled.add(r, c, v * scale[r] * scale[c]);
            }
        }
    }
    let srhs: Vec<f64> = rhs.iter().zip(&scale).map(|(b, s)| b * s).collect();
    let (y, info) = solve_spd(&scaled, &srhs).map_err(|e| Error::Numeric(format!("disk solve failed: {e}")))?;
    let mut v: Vec<f64> = y.iter().zip(&scale).map(|(a, s)| a * s).collect();
    v.extend_from_slice(&g_outer);
    let radii: Vec<f64> = (0..=nr).map(|i| s_at(i as f64).exp()).collect();

    let v_origin = v[..nt].iter().sum::<f64>() / nt as f64;
    let decay: Vec<DecaySample> = radii
        .iter()
        .enumerate()
        .map(|(i, &r)| DecaySample {
            r,
            sup_osc: v[i * nt..(i + 1) * nt]
                .iter()
                .fold(0.0_f64, |m, x| m.max((x - v_origin).abs())),
        })
        .collect();
    let max_abs = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let g_scale = g_outer.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let window: Vec<&DecaySample> = decay
        .iter()
        .filter(|d| d.r >= DECAY_WINDOW.0 * (1.0 - 1e-12) && d.r <= DECAY_WINDOW.1 * (1.0 + 1e-12))
        .collect();
    let (alpha_emp, fit_r_squared) = if window.iter().all(|d| d.sup_osc > 1e-10 * g_scale) && window.len() >= 4 {
        let x: Vec<f64> = window.iter().map(|d| d.r.ln()).collect();
        let yv: Vec<f64> = window.iter().map(|d| d.sup_osc.ln()).collect();
        let (slope, r2) = least_squares(&x, &yv);
        (Some(slope), Some(r2))
    } else {
        (None, None)
    };
    Ok(WeightedSolveResult {
        grid,
        radii,
        v,
        v_origin,
        decay,
        alpha_emp,
        fit_r_squared,
        max_abs,
        linear_relative_residual: info.relative_residual,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}
