//! Blow-up exponents: closed forms, ε-sweeps and log-log fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::GapGeometry;
use crate::solver::{build_grid, solve, DiscreteField, SolverConfig};

/// Which mechanism sets the two-dimensional rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ConvexityDominated,
    NonlinearityDominated,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRates {
    pub d: usize,
    pub m: f64,
    pub p: f64,
    pub tau: f64,
    /// `1/max{p−1, m}`.
    pub rate_2d: f64,
    /// `1/m`.
    pub upper_thm11: f64,
    /// `(d+m−2+2τ)/(m(p−1))`, available only for `p > d+m−1`.
    pub upper_thm13: Option<f64>,
    /// `(1−τ)/m` for `p ≤ m+1`, `(m−2τ)/(m(p−1))` otherwise.
    pub lower_thm15: f64,
    pub regime: Regime,
}

/// Rate from the convexity branch, `1/m`.
pub fn convexity_branch(m: f64) -> f64 {
    1.0 / m
}

/// Rate from the nonlinearity branch, `1/(p−1)`.
pub fn nonlinearity_branch(p: f64) -> f64 {
    1.0 / (p - 1.0)
}

pub fn theory_exponents(d: usize, m: f64, p: f64, tau: f64) -> Result<TheoryRates> {
    if d < 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    if !(m > 2.0) {
        return param(format!("m must exceed 2, got {m}"));
    }
    if !(p > 1.0) {
        return param(format!("p must exceed 1, got {p}"));
    }
    if !(tau > 0.0 && tau < m - 2.0) {
        return param(format!("τ must lie in (0, m−2) = (0, {}), got {tau}", m - 2.0));
    }
    let crit = m + 1.0;
    let (rate_2d, regime, lower) = if p < crit {
        (convexity_branch(m), Regime::ConvexityDominated, (1.0 - tau) / m)
    } else if p > crit {
        (
            nonlinearity_branch(p),
            Regime::NonlinearityDominated,
            (m - 2.0 * tau) / (m * (p - 1.0)),
        )
    } else {
        (convexity_branch(m), Regime::Critical, (1.0 - tau) / m)
    };
    let df = d as f64;
    let upper_thm13 = (p > df + m - 1.0).then(|| (df + m - 2.0 + 2.0 * tau) / (m * (p - 1.0)));
    Ok(TheoryRates {
        d,
        m,
        p,
        tau,
        rate_2d,
        upper_thm11: 1.0 / m,
        upper_thm13,
        lower_thm15: lower,
        regime,
    })
}

/// Radius `(4mε/(m−2−τ))^{1/m}` of the region on which the lower bound
/// localizes.
pub fn measurement_radius(m: f64, eps: f64, tau: f64) -> f64 {
    (4.0 * m * eps / (m - 2.0 - tau)).powf(1.0 / m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub eps: Vec<f64>,
    pub gmax: Vec<f64>,
    pub fitted_exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `log gmax` against `−log ε`.
pub fn fit_exponent(eps: &[f64], gmax: &[f64]) -> Result<RateFit> {
    if eps.len() != gmax.len() {
        return Err(Error::Data(format!("{} ε values but {} gmax values", eps.len(), gmax.len())));
    }
    if eps.len() < 4 {
        return Err(Error::Data(format!("need at least 4 points, got {}", eps.len())));
    }
    if let Some((e, g)) = eps
        .iter()
        .zip(gmax)
        .find(|(e, g)| !(**e > 0.0 && **g > 0.0 && e.is_finite() && g.is_finite()))
    {
        return Err(Error::Data(format!("non-positive or non-finite pair (ε={e}, gmax={g})")));
    }
    let x: Vec<f64> = eps.iter().map(|e| -e.ln()).collect();
    let y: Vec<f64> = gmax.iter().map(|g| g.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("all ε values coincide".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    // A constant series is fitted exactly by slope zero.
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) * n {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        eps: eps.to_vec(),
        gmax: gmax.to_vec(),
        fitted_exponent: slope,
        intercept,
        r_squared,
    })
}

/// Ratio of `|∇u|(ε+|x′|^m)^{1/m}` to the oscillation of `u` over the slab
/// of radius `ϱ = (c̃₀/3)δ^{1/m}`, maximized over grid columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm1Diagnostic {
    pub max_ratio: f64,
    /// `x₁` of the column attaining the maximum.
    pub argmax_x1: f64,
    pub sampled: usize,
    pub skipped: usize,
    pub c_tilde0: f64,
}

pub fn thm1_ratio(field: &DiscreteField) -> Result<Thm1Diagnostic> {
    let grid = &field.grid;
    let geometry = &grid.geometry;
    // c̃₀ does not depend on the Hölder parameter; any admissible value works.
    let c_tilde0 = geometry.compute_constants(field.p, 0.5, None)?.c_tilde0;
    let (m, eps) = (geometry.m(), geometry.eps());
    let floor = 1e-12 * field.total_oscillation();
    let (mut best, mut arg, mut sampled, mut skipped) = (f64::NEG_INFINITY, f64::NAN, 0, 0);
    for (i, col) in grid.centers.iter().enumerate() {
        let rho = c_tilde0 / 3.0 * col.delta.powf(1.0 / m);
        let osc = field.oscillation(col.y1, rho)?;
        if !(osc > floor) {
            skipped += 1;
            continue;
        }
        let g = (0..grid.n2)
            .map(|j| {
                let v = field.grad_phys[grid.cell(i, j)];
                v[0].hypot(v[1])
            })
            .fold(0.0, f64::max);
        let ratio = g * (eps + col.y1.abs().powf(m)).powf(1.0 / m) / osc;
        sampled += 1;
        if ratio > best {
            best = ratio;
            arg = col.y1;
        }
    }
    if sampled == 0 {
        return Err(Error::Degenerate(format!(
            "all {skipped} columns have vanishing oscillation"
        )));
    }
    Ok(Thm1Diagnostic {
        max_ratio: best,
        argmax_x1: arg,
        sampled,
        skipped,
        c_tilde0,
    })
}

/// How the Harnack annulus radius depends on `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HarnackRadius {
    Fixed { r: f64 },
    /// `r = factor · ε^{1/m}`.
    Scaled { factor: f64 },
}

impl HarnackRadius {
    pub fn radius(&self, m: f64, eps: f64) -> f64 {
        match *self {
            HarnackRadius::Fixed { r } => r,
            HarnackRadius::Scaled { factor } => factor * eps.powf(1.0 / m),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Geometry template; its `ε` is replaced per sweep point.
    pub geometry: GapGeometry,
    pub eps: Vec<f64>,
    pub solver: SolverConfig,
    pub half_length: f64,
    /// `τ` of the measurement radius `(4mε/(m−2−τ))^{1/m}`.
    pub tau: f64,
    pub harnack: HarnackRadius,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.eps.len() < 4 {
            return Err(Error::Precondition(format!(
                "a sweep needs at least 4 ε values, got {}",
                self.eps.len()
            )));
        }
        if !self.eps.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::Precondition("ε values must be strictly decreasing".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Precondition(format!("ε must be positive, got {e}")));
        }
        let m = self.geometry.m();
        if !(self.tau > 0.0 && self.tau < m - 2.0) {
            return param(format!("τ must lie in (0, m−2), got {}", self.tau));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub converged: bool,
    pub outer_iters: usize,
    pub gmax: f64,
    pub measurement_radius: f64,
    pub harnack_radius: f64,
    pub harnack_ratio: f64,
    pub harnack_degenerate: bool,
    pub thm1_ratio: f64,
    pub osc_center: f64,
    pub final_residual: f64,
    pub error: Option<String>,
}

impl SweepPoint {
    fn failed(eps: f64, err: &Error) -> Self {
        let (outer_iters, final_residual) = match err {
            Error::NonConvergence {
                iterations,
                last_residual,
                ..
            } => (*iterations, *last_residual),
            _ => (0, f64::NAN),
        };
        Self {
            eps,
            converged: false,
            outer_iters,
            gmax: f64::NAN,
            measurement_radius: f64::NAN,
            harnack_radius: f64::NAN,
            harnack_ratio: f64::NAN,
            harnack_degenerate: false,
            thm1_ratio: f64::NAN,
            osc_center: f64::NAN,
            final_residual,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub failures: usize,
}

impl SweepResult {
    pub fn converged(&self) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(|p| p.converged)
    }

    /// Fit over the converged points.
    pub fn fit(&self) -> Result<RateFit> {
        let (e, g): (Vec<f64>, Vec<f64>) = self.converged().map(|p| (p.eps, p.gmax)).unzip();
        fit_exponent(&e, &g)
    }
}

/// Solves and measures one sweep point.
pub fn measure_point(plan: &SweepPlan, eps: f64) -> Result<(SweepPoint, DiscreteField)> {
    let geometry = plan.geometry.with_eps(eps)?;
    let grid = build_grid(&geometry, &plan.solver, plan.half_length)?;
    let field = solve(&grid, &plan.solver)?;
    let m = geometry.m();
    let r_meas = measurement_radius(m, eps, plan.tau).min(plan.half_length);
    let gmax = field.grad_max(r_meas)?;
    let r_h = plan.harnack.radius(m, eps);
    let harnack = field.harnack_ratio(r_h)?;
    let thm1 = thm1_ratio(&field)?;
    let c_tilde0 = thm1.c_tilde0;
    let osc_center = field.oscillation(0.0, c_tilde0 / 3.0 * eps.powf(1.0 / m))?;
    let point = SweepPoint {
        eps,
        converged: true,
        outer_iters: field.trace.outer_iterations,
        gmax,
        measurement_radius: r_meas,
        harnack_radius: r_h,
        harnack_ratio: harnack.ratio,
        harnack_degenerate: harnack.degenerate,
        thm1_ratio: thm1.max_ratio,
        osc_center,
        final_residual: *field.residual_history.last().unwrap_or(&f64::NAN),
        error: None,
    };
    Ok((point, field))
}

/// Runs every sweep point as an independent task on the current rayon pool.
/// Failed points are recorded; more than half failing is an error.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult> {
    sweep_impl(plan, false).map(|(r, _)| r)
}

/// Like [`run_sweep`], also returning the solved field of every converged
/// point (in plan order).
pub fn run_sweep_with_fields(plan: &SweepPlan) -> Result<(SweepResult, Vec<Option<DiscreteField>>)> {
    sweep_impl(plan, true)
}

fn sweep_impl(plan: &SweepPlan, keep: bool) -> Result<(SweepResult, Vec<Option<DiscreteField>>)> {
    plan.validate()?;
    let solved: Vec<(SweepPoint, Option<DiscreteField>)> = plan
        .eps
        .par_iter()
        .map(|&eps| match measure_point(plan, eps) {
            Ok((p, f)) => (p, keep.then_some(f)),
            Err(e) => (SweepPoint::failed(eps, &e), None),
        })
        .collect();
    let (points, fields): (Vec<SweepPoint>, Vec<Option<DiscreteField>>) = solved.into_iter().unzip();
    let failures = points.iter().filter(|p| !p.converged).count();
    if 2 * failures > points.len() {
        let msgs: Vec<String> = points
            .iter()
            .filter_map(|p| p.error.as_ref().map(|e| format!("ε={}: {e}", p.eps)))
            .collect();
        return Err(Error::Sweep(format!(
            "{failures} of {} solves failed: {}",
            points.len(),
            msgs.join("; ")
        )));
    }
    Ok((SweepResult { points, failures }, fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConvexityBounds, ProfileSpec};

    #[test]
    fn closed_forms() {
        let t = theory_exponents(2, 4.0, 2.0, 0.5).unwrap();
        assert_eq!(t.rate_2d, 0.25);
        assert_eq!(t.regime, Regime::ConvexityDominated);
        assert!(t.upper_thm13.is_none());
        assert_eq!(t.lower_thm15, 0.125);
        let t = theory_exponents(2, 3.0, 6.0, 0.5).unwrap();
        assert_eq!(t.rate_2d, 0.2);
        assert_eq!(t.regime, Regime::NonlinearityDominated);
        let t = theory_exponents(2, 4.0, 7.0, 0.5).unwrap();
        assert!((t.upper_thm13.unwrap() - 5.0 / 24.0).abs() < 1e-15);
        assert!((t.lower_thm15 - 3.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn critical_point_branches_agree() {
        for m in [3.0, 4.0, 5.5] {
            let t = theory_exponents(2, m, m + 1.0, 0.5).unwrap();
            assert_eq!(t.regime, Regime::Critical);
            assert_eq!(convexity_branch(m), nonlinearity_branch(m + 1.0));
            assert_eq!(t.rate_2d, nonlinearity_branch(m + 1.0));
        }
    }

    #[test]
    fn tau_out_of_range() {
        assert!(theory_exponents(2, 4.0, 2.0, 2.0).is_err());
        assert!(theory_exponents(2, 4.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn exact_power_law_fit() {
        let eps = [1e-2, 1e-3, 1e-4, 1e-5];
        let g = [10.0, 31.622_776_601_683_79, 100.0, 316.227_766_016_837_9];
        let f = fit_exponent(&eps, &g).unwrap();
        assert!((f.fitted_exponent - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = fit_exponent(&eps, &[2.0; 4]).unwrap();
        assert_eq!(f.fitted_exponent, 0.0);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn fit_rejects_bad_data() {
        let eps = [1e-2, 1e-3, 1e-4, 1e-5];
        assert!(matches!(fit_exponent(&eps, &[1.0, 2.0, 0.0, 3.0]), Err(Error::Data(_))));
        assert!(matches!(fit_exponent(&eps[..3], &[1.0, 2.0, 3.0]), Err(Error::Data(_))));
    }

    fn flat_plan(eps: Vec<f64>) -> SweepPlan {
        let kappa = ConvexityBounds {
            kappa1: 0.45,
            kappa2: 0.9,
            kappa3: 3.6,
            kappa4: 40.0,
        };
        SweepPlan {
            geometry: GapGeometry::new(2, 4.0, 0.1, ProfileSpec::Flat, kappa, 0.5).unwrap(),
            eps,
            solver: SolverConfig {
                n1: 16,
                n2: 8,
                ..SolverConfig::default()
            },
            half_length: 1.0,
            tau: 0.5,
            harnack: HarnackRadius::Fixed { r: 0.25 },
        }
    }

    #[test]
    fn flat_sweep_has_no_blow_up() {
        let r = run_sweep(&flat_plan(vec![1e-1, 5e-2, 2e-2, 1e-2])).unwrap();
        assert_eq!(r.failures, 0);
        for p in &r.points {
            assert!((p.gmax - 1.0).abs() < 1e-9);
            assert!((p.harnack_ratio - 3.0).abs() < 1e-8);
        }
        assert!(r.fit().unwrap().fitted_exponent.abs() < 1e-9);
    }

    #[test]
    fn short_plan_rejected() {
        assert!(matches!(run_sweep(&flat_plan(vec![1e-1, 1e-2])), Err(Error::Precondition(_))));
        assert!(run_sweep(&flat_plan(vec![1e-2, 1e-1, 1e-3, 1e-4])).is_err());
    }

    #[test]
    fn linear_channel_thm1_ratio_at_center() {
        let plan = flat_plan(vec![1e-1, 5e-2, 2e-2, 1e-2]);
        let (_, field) = measure_point(&plan, 0.1).unwrap();
        let d = thm1_ratio(&field).unwrap();
        assert_eq!(d.skipped, 0);
        // Ratio is |∇u|(ε+|x₁|⁴)^{1/4}/(2ϱ); the largest |x₁| dominates.
        let rho = d.c_tilde0 / 3.0 * 0.1f64.powf(0.25);
        let x = field.grid.centers.last().unwrap().y1;
        let expect = (0.1 + x.powi(4)).powf(0.25) / (2.0 * rho);
        assert!((d.max_ratio - expect).abs() < 1e-8 * expect, "{} {}", d.max_ratio, expect);
    }
}
