//! Explicit barriers for the insulated p-Laplace problem in the neck.
//!
//! The supersolution is `w = P^{γ/m}` with `P = |x'|^m + a|x'|^{m−2}x_d²`,
//! `a = m(m+τ)/2`; the two-dimensional subsolution is
//! `w̲ = [v − (2mε/(m−2−τ))^{γ/m}]₊` with `v` of the same form and
//! `b = m(m−τ)/2`. Both are differentiated in closed form.
//!
//! Writing `A = mρ^{m−2} + c(m−2)ρ^{m−4}z²` (`ρ = |x'|`, `z = x_d`):
//!
//! ```text
//! ∂_i P  = A x_i                       ∂_d P  = 2cρ^{m−2} z
//! ∂_ij P = A δ_ij + B x_i x_j          ∂_id P = 2c(m−2)ρ^{m−4} z x_i
//! ∂_dd P = 2cρ^{m−2}                   B = m(m−2)ρ^{m−4} + c(m−2)(m−4)ρ^{m−6}z²
//! ```
//!
//! and for `f = P^β`: `∇f = βP^{β−1}∇P`,
//! `∇²f = βP^{β−1}∇²P + β(β−1)P^{β−2}∇P∇Pᵀ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{GapGeometry, Inclusion, ProfileSpec};

/// Relative tolerance absorbed by every sign test.
pub const SIGN_TOL: f64 = 1e-14;

/// Violations stored in a verdict; the count is always exact.
const MAX_STORED_VIOLATIONS: usize = 256;

const BISECTION_STEPS: usize = 20;

/// Value, gradient and Hessian of a scalar field at a point of `ℝ^d`,
/// `d ≤ 3`; entries past `dim` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub dim: usize,
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl Jet {
    pub fn grad_norm(&self) -> f64 {
        self.grad[..self.dim].iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn laplacian(&self) -> f64 {
        (0..self.dim).map(|i| self.hess[i][i]).sum()
    }

    /// `⟨∇f, (∇²f)∇f⟩`.
    pub fn hess_quadratic(&self) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.grad[i] * self.hess[i][j] * self.grad[j];
            }
        }
        s
    }
}

/// A scalar field with closed-form first and second derivatives.
pub trait ClosedFormField {
    fn dim(&self) -> usize;
    fn jet(&self, x: &[f64]) -> Result<Jet>;
}

/// `div(|∇f|^{p−2}∇f) = |∇f|^{p−4}(|∇f|²Δf + (p−2)⟨∇f, ∇²f ∇f⟩)`.
pub fn p_laplace_of<F: ClosedFormField + ?Sized>(f: &F, p: f64, x: &[f64]) -> Result<f64> {
    p_laplace_of_jet(&f.jet(x)?, p)
}

pub fn p_laplace_of_jet(j: &Jet, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return param(format!("p must exceed 1, got {p}"));
    }
    let g2 = j.grad_norm().powi(2);
    if g2 == 0.0 {
        return if p > 2.0 {
            Ok(0.0)
        } else if p == 2.0 {
            Ok(j.laplacian())
        } else {
            Err(Error::Singularity(format!(
                "p-Laplacian with p = {p} < 2 at a critical point"
            )))
        };
    }
    let core = g2 * j.laplacian() + (p - 2.0) * j.hess_quadratic();
    Ok(g2.powf(0.5 * (p - 4.0)) * core)
}

/// Sign-carrying part of the p-Laplacian, scaled to be dimensionless:
/// `(|∇f|²Δf + (p−2)⟨∇f,∇²f∇f⟩) / (|∇f|² Σ|∂_ij f| (1 + |p−2|))`.
fn normalized_p_laplace(j: &Jet, p: f64) -> f64 {
    let n = j.dim;
    let g2 = j.grad_norm().powi(2);
    let hsum: f64 = (0..n).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| j.hess[i][k].abs()).sum();
    let scale = g2 * hsum * (1.0 + (p - 2.0).abs());
    let core = g2 * j.laplacian() + (p - 2.0) * j.hess_quadratic();
    if scale > 0.0 {
        core / scale
    } else {
        0.0
    }
}

/// `f(x) = c + ⟨k, x⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearField {
    pub dim: usize,
    pub offset: f64,
    pub slope: [f64; 3],
}

impl ClosedFormField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        check_point(self.dim, x)?;
        let value = self.offset + x.iter().zip(&self.slope).map(|(a, b)| a * b).sum::<f64>();
        Ok(Jet {
            dim: self.dim,
            value,
            grad: self.slope,
            hess: [[0.0; 3]; 3],
        })
    }
}

/// `f(x) = |x − x₀|^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPower {
    pub dim: usize,
    pub center: [f64; 3],
    pub exponent: f64,
}

impl RadialPower {
    /// Radial p-harmonic function `|x − x₀|^{(p−d)/(p−1)}` (`p ≠ d`).
    pub fn p_harmonic(dim: usize, center: [f64; 3], p: f64) -> Self {
        Self {
            dim,
            center,
            exponent: (p - dim as f64) / (p - 1.0),
        }
    }
}

impl ClosedFormField for RadialPower {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        check_point(self.dim, x)?;
        let n = self.dim;
        let mut y = [0.0; 3];
        for i in 0..n {
            y[i] = x[i] - self.center[i];
        }
        let r2: f64 = y.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(Error::Singularity("radial power at its center".into()));
        }
        let k = self.exponent;
        let value = r2.powf(0.5 * k);
        let c1 = k * r2.powf(0.5 * k - 1.0);
        let c2 = k * (k - 2.0) * r2.powf(0.5 * k - 2.0);
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for i in 0..n {
            grad[i] = c1 * y[i];
            for j in 0..n {
                hess[i][j] = c2 * y[i] * y[j] + if i == j { c1 } else { 0.0 };
            }
        }
        Ok(Jet {
            dim: n,
            value,
            grad,
            hess,
        })
    }
}

fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Domain(format!(
            "point has {} components, expected {dim}",
            x.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Supersolution,
    Subsolution,
}

/// Parameters of one of the two barriers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    kind: BarrierKind,
    d: usize,
    m: f64,
    p: f64,
    tau: f64,
    gamma: f64,
    coeff: f64,
    threshold: f64,
    eps: Option<f64>,
}

impl BarrierSpec {
    /// `w = (|x'|^m + a|x'|^{m−2}x_d²)^{γ/m}`, valid for `p > d+m−1`,
    /// `τ ∈ (0, p−d−m+1)` and `γ ∈ (0, (p−d−m+1−τ)/(p−1))`.
    pub fn supersolution(d: usize, m: f64, p: f64, tau: f64, gamma: f64) -> Result<Self> {
        if !(d == 2 || d == 3) {
            return Err(Error::UnsupportedDimension(d));
        }
        check_common(m, p, tau, gamma)?;
        let slack = p - d as f64 - m + 1.0;
        if !(slack > 0.0) {
            return param(format!("supersolution needs p > d+m−1 = {}, got p = {p}", p - slack));
        }
        if !(tau < slack) {
            return param(format!("τ must lie in (0, {slack}), got {tau}"));
        }
        let gmax = (slack - tau) / (p - 1.0);
        if !(gamma < gmax) {
            return param(format!("γ must lie in (0, {gmax}), got {gamma}"));
        }
        Ok(Self {
            kind: BarrierKind::Supersolution,
            d,
            m,
            p,
            tau,
            gamma,
            coeff: 0.5 * m * (m + tau),
            threshold: 0.0,
            eps: None,
        })
    }

    /// `w̲ = [(|x₁|^m + b|x₁|^{m−2}x₂²)^{γ/m} − (2mε/(m−2−τ))^{γ/m}]₊` in two
    /// dimensions, valid for `τ ∈ (0, m−2)` and `γ > max{0, (p−m−1+τ)/(p−1)}`.
    pub fn subsolution(m: f64, p: f64, tau: f64, gamma: f64, eps: f64) -> Result<Self> {
        check_common(m, p, tau, gamma)?;
        if !(tau < m - 2.0) {
            return param(format!("τ must lie in (0, m−2) = (0, {}), got {tau}", m - 2.0));
        }
        let gmin = (p - m - 1.0 + tau) / (p - 1.0);
        if !(gamma > gmin) {
            return param(format!("γ must exceed {gmin}, got {gamma}"));
        }
        if !(eps > 0.0) {
            return param(format!("ε must be positive, got {eps}"));
        }
        Ok(Self {
            kind: BarrierKind::Subsolution,
            d: 2,
            m,
            p,
            tau,
            gamma,
            coeff: 0.5 * m * (m - tau),
            threshold: (2.0 * m * eps / (m - 2.0 - tau)).powf(gamma / m),
            eps: Some(eps),
        })
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    /// `a` for the supersolution, `b` for the subsolution.
    pub fn coeff(&self) -> f64 {
        self.coeff
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Radius `(mε/(m−2−τ))^{1/m}` inside which the subsolution vanishes.
    pub fn cutoff_radius(&self) -> Option<f64> {
        self.eps
            .map(|eps| (self.m * eps / (self.m - 2.0 - self.tau)).powf(1.0 / self.m))
    }

    fn split(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_point(self.d, x)?;
        let n = self.d - 1;
        let rho = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((rho, x[n]))
    }

    /// `(|x'|^m + c|x'|^{m−2}x_d²)^{γ/m}` before any truncation.
    pub fn branch_value(&self, x: &[f64]) -> Result<f64> {
        let (rho, z) = self.split(x)?;
        if rho == 0.0 {
            return Ok(0.0);
        }
        let m = self.m;
        let pv = rho.powf(m) + self.coeff * rho.powf(m - 2.0) * z * z;
        Ok(pv.powf(self.gamma / m))
    }

    /// Barrier value, including the positive-part truncation.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.branch_value(x)? - self.threshold).max(0.0))
    }
}

fn check_common(m: f64, p: f64, tau: f64, gamma: f64) -> Result<()> {
    if !(m > 2.0) {
        return param(format!("barriers need m > 2, got {m}"));
    }
    if !(p > 1.0) {
        return param(format!("p must exceed 1, got {p}"));
    }
    if !(tau > 0.0) {
        return param(format!("τ must be positive, got {tau}"));
    }
    if !(gamma > 0.0) {
        return param(format!("γ must be positive, got {gamma}"));
    }
    Ok(())
}

impl ClosedFormField for BarrierSpec {
    fn dim(&self) -> usize {
        self.d
    }

    /// Derivatives of the untruncated branch; `value` is the branch value.
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let (rho, z) = self.split(x)?;
        if rho == 0.0 {
            return Err(Error::Singularity(
                "barrier is not differentiable on the axis x' = 0".into(),
            ));
        }
        let (m, c) = (self.m, self.coeff);
        let n = self.d - 1;
        let beta = self.gamma / m;
        let rm2 = rho.powf(m - 2.0);
        let rm4 = rho.powf(m - 4.0);
        let rm6 = rho.powf(m - 6.0);
        let z2 = z * z;
        let pv = rho * rho * rm2 + c * rm2 * z2;
        let a = m * rm2 + c * (m - 2.0) * rm4 * z2;
        let b = m * (m - 2.0) * rm4 + c * (m - 2.0) * (m - 4.0) * rm6 * z2;

        let mut dp = [0.0; 3];
        let mut ddp = [[0.0; 3]; 3];
        for i in 0..n {
            dp[i] = a * x[i];
            for j in 0..n {
                ddp[i][j] = b * x[i] * x[j] + if i == j { a } else { 0.0 };
            }
            let mixed = 2.0 * c * (m - 2.0) * rm4 * z * x[i];
            ddp[i][n] = mixed;
            ddp[n][i] = mixed;
        }
        dp[n] = 2.0 * c * rm2 * z;
        ddp[n][n] = 2.0 * c * rm2;

        let f1 = beta * pv.powf(beta - 1.0);
        let f2 = beta * (beta - 1.0) * pv.powf(beta - 2.0);
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for i in 0..=n {
            grad[i] = f1 * dp[i];
            for j in 0..=i {
                let h = f1 * ddp[i][j] + f2 * dp[i] * dp[j];
                hess[i][j] = h;
                hess[j][i] = h;
            }
        }
        Ok(Jet {
            dim: self.d,
            value: pv.powf(beta),
            grad,
            hess,
        })
    }
}

/// Full evaluation of a barrier at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEvaluation {
    /// Barrier value after truncation.
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
    pub p_laplace: f64,
    /// Outward normal derivative, present when the point was evaluated on
    /// `Γ⁺` or `Γ⁻`.
    pub neumann_flux: Option<f64>,
    /// True when the truncation is active (`value` is 0 and the derivatives
    /// belong to the untruncated branch).
    pub truncated: bool,
}

pub fn eval_barrier(spec: &BarrierSpec, x: &[f64]) -> Result<PointEvaluation> {
    let jet = spec.jet(x)?;
    let p_laplace = p_laplace_of_jet(&jet, spec.p)?;
    Ok(PointEvaluation {
        value: (jet.value - spec.threshold).max(0.0),
        grad: jet.grad,
        hess: jet.hess,
        p_laplace,
        neumann_flux: None,
        truncated: jet.value <= spec.threshold,
    })
}

/// Worst relative disagreement between the closed-form jet and central
/// differences: the gradient against differences of the branch value, the
/// Hessian against differences of the closed-form gradient. Errors are
/// normalized by `|∇f|` and the Frobenius norm of `∇²f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub points: usize,
    /// Points on the axis `x' = 0`, where the jet is singular.
    pub skipped: usize,
    pub max_grad_error: f64,
    pub max_hess_error: f64,
}

pub fn check_derivatives(spec: &BarrierSpec, points: &[[f64; 3]]) -> Result<DerivativeCheck> {
    let d = spec.d;
    let mut out = DerivativeCheck {
        points: 0,
        skipped: 0,
        max_grad_error: 0.0,
        max_hess_error: 0.0,
    };
    for x in points {
        let x = &x[..d];
        let j = match spec.jet(x) {
            Ok(j) => j,
            Err(Error::Singularity(_)) => {
                out.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let hn = j.hess.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..d {
            let h = 1e-6 * scale;
            let (mut xp, mut xm) = ([0.0; 3], [0.0; 3]);
            xp[..d].copy_from_slice(x);
            xm[..d].copy_from_slice(x);
            xp[k] += h;
            xm[k] -= h;
            let fd = (spec.branch_value(&xp[..d])? - spec.branch_value(&xm[..d])?) / (2.0 * h);
            out.max_grad_error = out.max_grad_error.max((fd - j.grad[k]).abs() / j.grad_norm());
            let (gp, gm) = (spec.jet(&xp[..d])?.grad, spec.jet(&xm[..d])?.grad);
            for l in 0..d {
                let fd2 = (gp[l] - gm[l]) / (2.0 * h);
                out.max_hess_error = out.max_hess_error.max((fd2 - j.hess[l][k]).abs() / hn);
            }
        }
        out.points += 1;
    }
    Ok(out)
}

fn boundary_point(geometry: &GapGeometry, side: Inclusion, xprime: &[f64]) -> Result<[f64; 3]> {
    let n = geometry.d() - 1;
    let mut x = [0.0; 3];
    x[..n].copy_from_slice(xprime);
    x[n] = geometry.boundary_height(side, xprime)?;
    Ok(x)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `∂f/∂ν` at the point of `Γ⁺` or `Γ⁻` above `x'`, with `ν` the outward
/// normal of the gap region.
pub fn neumann_flux<F: ClosedFormField + ?Sized>(
    field: &F,
    geometry: &GapGeometry,
    side: Inclusion,
    xprime: &[f64],
) -> Result<f64> {
    if field.dim() != geometry.d() {
        return Err(Error::Domain(format!(
            "field dimension {} differs from geometry dimension {}",
            field.dim(),
            geometry.d()
        )));
    }
    let x = boundary_point(geometry, side, xprime)?;
    let jet = field.jet(&x[..geometry.d()])?;
    let nu = geometry.outward_normal(side, xprime)?;
    Ok(dot(&jet.grad, &nu))
}

/// Resolution of the sampling grid: geometric in `|x'|`, uniform in
/// relative height across the gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleGrid {
    pub n_radial: usize,
    pub n_height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Sign of the p-Laplacian in the interior.
    PLaplace,
    /// Sign of the normal derivative on `Γ⁺`.
    FluxUpper,
    /// Sign of the normal derivative on `Γ⁻`.
    FluxLower,
    /// Subsolution must vanish inside the cutoff radius.
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub quantity: Quantity,
    /// Normalized margin; negative means the sign condition failed.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRegion {
    pub description: String,
    pub r_inner: f64,
    pub r_outer: f64,
    pub n_radial: usize,
    pub n_height: usize,
}

/// Outcome of a sampling verification. Margins are normalized so that a
/// sample passes iff its margin is non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierVerdict {
    pub kind: BarrierKind,
    pub params: BarrierSpec,
    pub eps: f64,
    pub region: SampleRegion,
    pub n_samples: usize,
    pub n_violations: usize,
    pub violations: Vec<Violation>,
    pub min_margin: f64,
    pub max_margin: f64,
    /// Largest radius, found by bisection over `(inner, R₀]`, below which
    /// every sample passes.
    pub empirical_r_hat: f64,
    /// Violations on the full search range `(inner, R₀]`.
    pub search_violations: usize,
    /// The admissible region was empty; never counts as a pass.
    pub degenerate: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    radius: f64,
    point: [f64; 3],
    quantity: Quantity,
    margin: f64,
}

/// Orientation of the sign conditions for the barrier kind.
fn interior_margin(spec: &BarrierSpec, jet: &Jet) -> f64 {
    let s = normalized_p_laplace(jet, spec.p);
    match spec.kind {
        BarrierKind::Supersolution => -s + SIGN_TOL,
        BarrierKind::Subsolution => s + SIGN_TOL,
    }
}

fn flux_margin(spec: &BarrierSpec, jet: &Jet, nu: &[f64; 3]) -> f64 {
    let g = jet.grad_norm();
    let s = if g > 0.0 { dot(&jet.grad, nu) / g } else { 0.0 };
    match spec.kind {
        BarrierKind::Supersolution => s + SIGN_TOL,
        BarrierKind::Subsolution => -s + SIGN_TOL,
    }
}

/// Generic horizontal direction used to embed radii in `ℝ^{d−1}`.
fn direction(d: usize, sign: f64) -> [f64; 2] {
    if d == 2 {
        [sign, 0.0]
    } else {
        let phi = std::f64::consts::PI / 6.0;
        [sign * phi.cos(), sign * phi.sin()]
    }
}

fn geometric(r_lo: f64, r_hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![r_hi];
    }
    let (a, b) = (r_lo.ln(), r_hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Interior and boundary samples on one radius.
fn samples_at_radius(
    spec: &BarrierSpec,
    geometry: &GapGeometry,
    radius: f64,
    sign: f64,
    n_height: usize,
) -> Result<Vec<Sample>> {
    let d = geometry.d();
    let n = d - 1;
    let dir = direction(d, sign);
    let xp: Vec<f64> = dir[..n].iter().map(|c| c * radius).collect();
    let lo = geometry.boundary_height(Inclusion::Lower, &xp)?;
    let hi = geometry.boundary_height(Inclusion::Upper, &xp)?;
    let mut out = Vec::with_capacity(n_height + 2);
    let mut point = [0.0; 3];
    point[..n].copy_from_slice(&xp);
    for j in 0..n_height {
        let t = (j as f64 + 0.5) / n_height as f64;
        point[n] = lo + t * (hi - lo);
        let jet = spec.jet(&point[..d])?;
        out.push(Sample {
            radius,
            point,
            quantity: Quantity::PLaplace,
            margin: interior_margin(spec, &jet),
        });
    }
    for (side, quantity, z) in [
        (Inclusion::Upper, Quantity::FluxUpper, hi),
        (Inclusion::Lower, Quantity::FluxLower, lo),
    ] {
        point[n] = z;
        let jet = spec.jet(&point[..d])?;
        let nu = geometry.outward_normal(side, &xp)?;
        // Where the truncation is active the barrier vanishes identically.
        let margin = if jet.value <= spec.threshold && spec.kind == BarrierKind::Subsolution {
            SIGN_TOL
        } else {
            flux_margin(spec, &jet, &nu)
        };
        out.push(Sample {
            radius,
            point,
            quantity,
            margin,
        });
    }
    Ok(out)
}

fn collect_samples(
    spec: &BarrierSpec,
    geometry: &GapGeometry,
    radii: &[f64],
    signs: &[f64],
    n_height: usize,
) -> Result<Vec<Sample>> {
    let tasks: Vec<(f64, f64)> = signs
        .iter()
        .flat_map(|&s| radii.iter().map(move |&r| (r, s)))
        .collect();
    let chunks: Vec<Result<Vec<Sample>>> = tasks
        .par_iter()
        .map(|&(r, s)| samples_at_radius(spec, geometry, r, s, n_height))
        .collect();
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Largest `r ∈ [lo, hi]` for which all samples with radius `≤ r` pass.
fn bisect_r_hat(samples: &[Sample], lo: f64, hi: f64) -> f64 {
    let passes = |r: f64| samples.iter().filter(|s| s.radius <= r).all(|s| s.margin >= 0.0);
    if passes(hi) {
        return hi;
    }
    if !passes(lo) {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if passes(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    a
}

fn summarize(
    spec: &BarrierSpec,
    eps: f64,
    region: SampleRegion,
    samples: &[Sample],
    empirical_r_hat: f64,
    search_violations: usize,
    degenerate: bool,
) -> BarrierVerdict {
    let mut min_margin = f64::INFINITY;
    let mut max_margin = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut n_violations = 0;
    for s in samples {
        min_margin = min_margin.min(s.margin);
        max_margin = max_margin.max(s.margin);
        if !(s.margin >= 0.0) {
            n_violations += 1;
            if violations.len() < MAX_STORED_VIOLATIONS {
                violations.push(Violation {
                    point: s.point[..spec.d].to_vec(),
                    quantity: s.quantity,
                    margin: s.margin,
                });
            }
        }
    }
    if samples.is_empty() {
        min_margin = f64::NAN;
        max_margin = f64::NAN;
    }
    BarrierVerdict {
        kind: spec.kind,
        params: *spec,
        eps,
        region,
        n_samples: samples.len(),
        n_violations,
        violations,
        min_margin,
        max_margin,
        empirical_r_hat,
        search_violations,
        degenerate,
        pass: !degenerate && n_violations == 0 && !samples.is_empty(),
    }
}

fn check_grid(grid: SampleGrid) -> Result<()> {
    if grid.n_radial < 2 || grid.n_height < 1 {
        return param(format!("sample grid too small: {grid:?}"));
    }
    Ok(())
}

/// Samples `−div(|∇w|^{p−2}∇w) > 0` in `Ω_{r̂} ∖ Ω_{ε^{2/m}}` and
/// `∂w/∂ν > 0` on `Γ^±`. The search range is `(ε^{2/m}, R₀]`; the verdict
/// reports the samples of the final region `Ω_{r̂} ∖ Ω_{ε^{2/m}}`.
pub fn verify_supersolution(
    spec: &BarrierSpec,
    geometry: &GapGeometry,
    grid: SampleGrid,
) -> Result<BarrierVerdict> {
    if spec.kind != BarrierKind::Supersolution {
        return param("verify_supersolution needs a supersolution spec");
    }
    if spec.d != geometry.d() {
        return param(format!(
            "barrier dimension {} differs from geometry dimension {}",
            spec.d,
            geometry.d()
        ));
    }
    check_grid(grid)?;
    let eps = geometry.eps();
    let inner = eps.powf(2.0 / spec.m);
    let outer = geometry.r0().min(geometry.profile().domain_radius() * (1.0 - 1e-9));
    let region = |r_outer: f64, description: &str| SampleRegion {
        description: description.to_string(),
        r_inner: inner,
        r_outer,
        n_radial: grid.n_radial,
        n_height: grid.n_height,
    };
    if !(outer > inner) {
        return Ok(summarize(spec, eps, region(outer, "empty: ε^{2/m} ≥ R0"), &[], inner, 0, true));
    }
    let search = collect_samples(spec, geometry, &geometric(inner, outer, grid.n_radial), &[1.0], grid.n_height)?;
    let search_violations = search.iter().filter(|s| !(s.margin >= 0.0)).count();
    let r_hat = bisect_r_hat(&search, inner, outer);
    if !(r_hat > inner) {
        return Ok(summarize(
            spec,
            eps,
            region(outer, "search range ε^{2/m} ≤ |x'| ≤ R0; no radius passes"),
            &search,
            r_hat,
            search_violations,
            false,
        ));
    }
    let samples = collect_samples(spec, geometry, &geometric(inner, r_hat, grid.n_radial), &[1.0], grid.n_height)?;
    Ok(summarize(
        spec,
        eps,
        region(r_hat, "annular neck ε^{2/m} ≤ |x'| ≤ r̂, interior heights and both walls"),
        &samples,
        r_hat,
        search_violations,
        false,
    ))
}

/// Samples `div(|∇w̲|^{p−2}∇w̲) ≥ 0` in `Ω_{r̂} ∩ {|x₁| ≥ r₁}`,
/// `∂w̲/∂ν ≤ 0` on `Γ^±` there, and `w̲ ≡ 0` on `Ω̄_{r₁}`, where
/// `r₁ = (mε/(m−2−τ))^{1/m}`. The geometry must be the unit curvilinear
/// square pair.
pub fn verify_subsolution(
    spec: &BarrierSpec,
    geometry: &GapGeometry,
    grid: SampleGrid,
) -> Result<BarrierVerdict> {
    if spec.kind != BarrierKind::Subsolution {
        return param("verify_subsolution needs a subsolution spec");
    }
    if geometry.d() != 2 {
        return Err(Error::UnsupportedDimension(geometry.d()));
    }
    match geometry.profile() {
        ProfileSpec::CurvilinearSquare { r_tilde0 } if r_tilde0 == 1.0 => {}
        other => {
            return Err(Error::Precondition(format!(
                "subsolution verification needs the unit curvilinear square, got {other:?}"
            )))
        }
    }
    check_grid(grid)?;
    let eps = geometry.eps();
    if spec.eps != Some(eps) {
        return Err(Error::Precondition(format!(
            "subsolution threshold built for ε = {:?}, geometry has ε = {eps}",
            spec.eps
        )));
    }
    let r1 = spec.cutoff_radius().expect("subsolution carries ε");
    let outer = geometry.r0().min(1.0 - 1e-9);
    let region = |r_outer: f64, description: &str| SampleRegion {
        description: description.to_string(),
        r_inner: r1,
        r_outer,
        n_radial: grid.n_radial,
        n_height: grid.n_height,
    };
    if !(outer > r1) {
        return Ok(summarize(spec, eps, region(outer, "empty: cutoff radius ≥ R0"), &[], r1, 0, true));
    }
    let signs = [-1.0, 1.0];
    let mut search = collect_samples(spec, geometry, &geometric(r1, outer, grid.n_radial), &signs, grid.n_height)?;
    let search_violations = search.iter().filter(|s| !(s.margin >= 0.0)).count();
    let r_hat = bisect_r_hat(&search, r1, outer);
    if !(r_hat > r1) {
        search.extend(truncation_samples(spec, geometry, r1, grid)?);
        return Ok(summarize(
            spec,
            eps,
            region(outer, "search range r₁ ≤ |x₁| ≤ R0 plus |x₁| ≤ r₁; no radius passes"),
            &search,
            r_hat,
            search_violations,
            false,
        ));
    }
    let mut samples = collect_samples(spec, geometry, &geometric(r1, r_hat, grid.n_radial), &signs, grid.n_height)?;
    samples.extend(truncation_samples(spec, geometry, r1, grid)?);
    Ok(summarize(
        spec,
        eps,
        region(
            r_hat,
            "r₁ ≤ |x₁| ≤ r̂ interior heights and both walls, plus vanishing on |x₁| ≤ r₁",
        ),
        &samples,
        r_hat,
        search_violations,
        false,
    ))
}

/// Uniform samples of `Ω̄_{r₁}`, walls included, checking `w̲ = 0`.
fn truncation_samples(
    spec: &BarrierSpec,
    geometry: &GapGeometry,
    r1: f64,
    grid: SampleGrid,
) -> Result<Vec<Sample>> {
    let nx = (grid.n_radial / 4).max(2);
    let ny = grid.n_height + 1;
    let mut out = Vec::with_capacity((2 * nx + 1) * (ny + 1));
    for i in 0..=(2 * nx) {
        let x1 = r1 * (i as f64 / nx as f64 - 1.0);
        let lo = geometry.boundary_height(Inclusion::Lower, &[x1])?;
        let hi = geometry.boundary_height(Inclusion::Upper, &[x1])?;
        for j in 0..=ny {
            let x2 = lo + (hi - lo) * j as f64 / ny as f64;
            let v = spec.branch_value(&[x1, x2])?;
            // Positive margin when the branch stays below the threshold.
            let margin = (spec.threshold - v) / spec.threshold + SIGN_TOL;
            out.push(Sample {
                radius: x1.abs(),
                point: [x1, x2, 0.0],
                quantity: Quantity::Truncation,
                margin,
            });
        }
    }
    Ok(out)
}
