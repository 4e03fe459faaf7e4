//! Two nearly touching inclusions and the thin gap between them.
//!
//! Near the closest points the inclusion boundaries are the graphs
//! `x_d = ε/2 + h₁(x')` (upper) and `x_d = −ε/2 + h₂(x')` (lower), so the local
//! gap width is `δ(x') = ε + h₁(x') − h₂(x')`. Profiles are radial in `x'` and
//! carry exact first and second derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Smallest radius used when sampling the convexity hypotheses.
pub const MIN_SAMPLE_RADIUS: f64 = 1e-12;

/// Shape of the two interfacial boundaries near the planar points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Pair of m-ellipsoids `|x'|^m + |x_d ∓ (ε/2 + r̃₀)|^m = r̃₀^m`; for `d = 2`
    /// these are curvilinear squares with rounded-off corners.
    CurvilinearSquare { r_tilde0: f64 },
    /// `h₁ = λ|x'|^m` and `h₂ = −λ|x'|^m` (symmetric) or `h₂ = 0`.
    Power { lambda: f64, symmetric: bool },
    /// Two parallel plates, `h₁ = h₂ = 0`.
    Flat,
}

/// Which of the two inclusions a boundary belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inclusion {
    /// `D₁`, above the gap; boundary `Γ⁺`.
    Upper,
    /// `D₂`, below the gap; boundary `Γ⁻`.
    Lower,
}

/// Value and first two radial derivatives of a profile at `ρ = |x'|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialJet {
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
}

impl RadialJet {
    const ZERO: RadialJet = RadialJet {
        h: 0.0,
        dh: 0.0,
        d2h: 0.0,
    };

    fn scaled(self, s: f64) -> Self {
        Self {
            h: s * self.h,
            dh: s * self.dh,
            d2h: s * self.d2h,
        }
    }
}

/// Both profiles along the signed coordinate `x₁` (the `d = 2` section),
/// with derivatives with respect to `x₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePair1d {
    pub h1: f64,
    pub dh1: f64,
    pub d2h1: f64,
    pub h2: f64,
    pub dh2: f64,
    pub d2h2: f64,
}

impl ProfileSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            ProfileSpec::CurvilinearSquare { r_tilde0 } if !(r_tilde0 > 0.0) => {
                param(format!("curvilinear square radius must be positive, got {r_tilde0}"))
            }
            ProfileSpec::Power { lambda, .. } if !(lambda > 0.0) => {
                param(format!("power profile coefficient must be positive, got {lambda}"))
            }
            _ => Ok(()),
        }
    }

    /// Largest radius (exclusive) on which the profile is defined.
    pub fn domain_radius(&self) -> f64 {
        match *self {
            ProfileSpec::CurvilinearSquare { r_tilde0 } => r_tilde0,
            _ => f64::INFINITY,
        }
    }

    fn radial(&self, m: f64, which: Inclusion, rho: f64) -> Result<RadialJet> {
        debug_assert!(rho >= 0.0);
        let upper = match *self {
            ProfileSpec::Flat => RadialJet::ZERO,
            ProfileSpec::Power { lambda, symmetric } => {
                if which == Inclusion::Lower && !symmetric {
                    return Ok(RadialJet::ZERO);
                }
                RadialJet {
                    h: lambda * rho.powf(m),
                    dh: lambda * m * rho.powf(m - 1.0),
                    d2h: lambda * m * (m - 1.0) * rho.powf(m - 2.0),
                }
            }
            ProfileSpec::CurvilinearSquare { r_tilde0: r } => {
                if rho >= r {
                    return Err(Error::Domain(format!(
                        "|x'| = {rho} outside the curvilinear square of radius {r}"
                    )));
                }
                // h = r (1 − (1 − t)^{1/m}), t = (ρ/r)^m, evaluated without
                // cancellation for small ρ.
                let t = (rho / r).powf(m);
                let h = -r * ((-t).ln_1p() / m).exp_m1();
                let rest = r.powf(m) - rho.powf(m);
                let dh = rho.powf(m - 1.0) * rest.powf(1.0 / m - 1.0);
                let d2h = (m - 1.0) * rho.powf(m - 2.0) * r.powf(m) * rest.powf(1.0 / m - 2.0);
                RadialJet { h, dh, d2h }
            }
        };
        Ok(match which {
            Inclusion::Upper => upper,
            Inclusion::Lower => upper.scaled(-1.0),
        })
    }
}

/// Curvature-scale constants of the convexity hypotheses:
/// `κ₁|x'|^m ≤ h₁ − h₂ ≤ κ₂|x'|^m`, `|∇h_i| ≤ κ₃|x'|^{m−1}`,
/// `‖h₁‖ + ‖h₂‖ ≤ κ₄` on `B'_{2R₀}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexityBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
}

impl ConvexityBounds {
    pub fn validate(&self) -> Result<()> {
        let k = self;
        if !(k.kappa1 > 0.0 && k.kappa1 <= k.kappa2 && k.kappa3 > 0.0 && k.kappa4 > 0.0) {
            return param(format!(
                "convexity bounds need 0 < κ₁ ≤ κ₂ and κ₃, κ₄ > 0, got {k:?}"
            ));
        }
        Ok(())
    }
}

/// The inclusion pair and its neck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapGeometry {
    d: usize,
    m: f64,
    eps: f64,
    profile: ProfileSpec,
    kappa: ConvexityBounds,
    r0: f64,
}

impl GapGeometry {
    pub fn new(
        d: usize,
        m: f64,
        eps: f64,
        profile: ProfileSpec,
        kappa: ConvexityBounds,
        r0: f64,
    ) -> Result<Self> {
        if !(d == 2 || d == 3) {
            return Err(Error::UnsupportedDimension(d));
        }
        if !(m >= 2.0) {
            return param(format!("convexity exponent m must be ≥ 2, got {m}"));
        }
        if !(eps > 0.0) {
            return param(format!("gap distance ε must be positive, got {eps}"));
        }
        if !(r0 > 0.0) {
            return param(format!("neck half-length R₀ must be positive, got {r0}"));
        }
        profile.validate()?;
        kappa.validate()?;
        Ok(Self {
            d,
            m,
            eps,
            profile,
            kappa,
            r0,
        })
    }

    /// Same geometry at a different gap distance.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.d, self.m, eps, self.profile, self.kappa, self.r0)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn profile(&self) -> ProfileSpec {
        self.profile
    }
    pub fn kappa(&self) -> ConvexityBounds {
        self.kappa
    }
    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// `ε/2 + h₁` is the height of `Γ⁺`, `−ε/2 + h₂` that of `Γ⁻`.
    pub fn is_symmetric(&self) -> bool {
        !matches!(
            self.profile,
            ProfileSpec::Power {
                symmetric: false,
                ..
            }
        )
    }

    fn check_dim(&self, xprime: &[f64]) -> Result<f64> {
        if xprime.len() != self.d - 1 {
            return Err(Error::Domain(format!(
                "x' has {} components, expected {}",
                xprime.len(),
                self.d - 1
            )));
        }
        Ok(xprime.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn radial_jet(&self, which: Inclusion, rho: f64) -> Result<RadialJet> {
        self.profile.radial(self.m, which, rho)
    }

    /// `h_i(x')`.
    pub fn h(&self, which: Inclusion, xprime: &[f64]) -> Result<f64> {
        let rho = self.check_dim(xprime)?;
        Ok(self.radial_jet(which, rho)?.h)
    }

    /// `∇h_i(x')`; components beyond `d − 1` are zero.
    pub fn grad_h(&self, which: Inclusion, xprime: &[f64]) -> Result<[f64; 2]> {
        let rho = self.check_dim(xprime)?;
        let jet = self.radial_jet(which, rho)?;
        let mut g = [0.0; 2];
        if rho > 0.0 {
            for (gi, xi) in g.iter_mut().zip(xprime) {
                *gi = jet.dh * xi / rho;
            }
        }
        Ok(g)
    }

    /// `∇²h_i(x')` as a `(d−1)×(d−1)` block of a 2×2 array.
    pub fn hess_h(&self, which: Inclusion, xprime: &[f64]) -> Result<[[f64; 2]; 2]> {
        let rho = self.check_dim(xprime)?;
        let jet = self.radial_jet(which, rho)?;
        let n = self.d - 1;
        let mut hm = [[0.0; 2]; 2];
        if rho == 0.0 {
            for (i, row) in hm.iter_mut().enumerate().take(n) {
                row[i] = jet.d2h;
            }
            return Ok(hm);
        }
        for i in 0..n {
            for j in 0..n {
                let ninj = xprime[i] * xprime[j] / (rho * rho);
                let id = if i == j { 1.0 } else { 0.0 };
                hm[i][j] = jet.d2h * ninj + jet.dh / rho * (id - ninj);
            }
        }
        Ok(hm)
    }

    /// `h₁(x') − h₂(x')`.
    pub fn profile_gap(&self, xprime: &[f64]) -> Result<f64> {
        let rho = self.check_dim(xprime)?;
        Ok(self.radial_jet(Inclusion::Upper, rho)?.h - self.radial_jet(Inclusion::Lower, rho)?.h)
    }

    /// Gap width `δ(x') = ε + h₁(x') − h₂(x')`.
    pub fn eval_delta(&self, xprime: &[f64]) -> Result<f64> {
        Ok(self.eps + self.profile_gap(xprime)?)
    }

    /// Both profiles along the signed horizontal coordinate of the `d = 2`
    /// section.
    pub fn profiles_1d(&self, x1: f64) -> Result<ProfilePair1d> {
        let rho = x1.abs();
        let s = if x1 < 0.0 { -1.0 } else { 1.0 };
        let up = self.radial_jet(Inclusion::Upper, rho)?;
        let lo = self.radial_jet(Inclusion::Lower, rho)?;
        Ok(ProfilePair1d {
            h1: up.h,
            dh1: s * up.dh,
            d2h1: up.d2h,
            h2: lo.h,
            dh2: s * lo.dh,
            d2h2: lo.d2h,
        })
    }

    /// Height of `Γ⁺` or `Γ⁻` above `x'`.
    pub fn boundary_height(&self, which: Inclusion, xprime: &[f64]) -> Result<f64> {
        let h = self.h(which, xprime)?;
        Ok(match which {
            Inclusion::Upper => 0.5 * self.eps + h,
            Inclusion::Lower => -0.5 * self.eps + h,
        })
    }

    /// Outward unit normal of the gap region on `Γ⁺` (pointing into `D₁`) or
    /// `Γ⁻` (pointing into `D₂`), as a `d`-vector in a 3-array.
    pub fn outward_normal(&self, which: Inclusion, xprime: &[f64]) -> Result<[f64; 3]> {
        let g = self.grad_h(which, xprime)?;
        let n = self.d - 1;
        let gn2: f64 = g[..n].iter().map(|v| v * v).sum();
        let inv = 1.0 / (1.0 + gn2).sqrt();
        let mut nu = [0.0; 3];
        let sign = match which {
            Inclusion::Upper => 1.0,
            Inclusion::Lower => -1.0,
        };
        for i in 0..n {
            nu[i] = -sign * g[i] * inv;
        }
        nu[n] = sign * inv;
        Ok(nu)
    }

    /// Samples the convexity hypotheses on a logarithmic radial grid of
    /// `B'_{2R₀}` and compares them with the declared bounds.
    pub fn check_admissibility(&self, samples: usize) -> Result<AdmissibilityReport> {
        if samples < 16 {
            return param(format!("admissibility check needs at least 16 samples, got {samples}"));
        }
        let m = self.m;
        let k = self.kappa;
        let domain = self.profile.domain_radius();
        let requested = 2.0 * self.r0;
        // Profiles defined only on |x'| < r̃₀ are sampled up to just inside it.
        let clipped = requested >= domain;
        let rho_max = if clipped { domain * (1.0 - 1e-6) } else { requested };

        let lmin = MIN_SAMPLE_RADIUS.ln();
        let lmax = rho_max.ln();
        let radii: Vec<f64> = (0..samples)
            .map(|i| (lmin + (lmax - lmin) * i as f64 / (samples - 1) as f64).exp())
            .collect();

        let mut h1_check = Vec::with_capacity(samples);
        let mut h2_check = Vec::with_capacity(samples);
        let (mut ratio_min, mut ratio_max, mut grad_ratio_max) =
            (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
        let mut norms = [[0.0_f64; 3]; 2];
        for &rho in &radii {
            let up = self.radial_jet(Inclusion::Upper, rho)?;
            let lo = self.radial_jet(Inclusion::Lower, rho)?;
            for (which, jet) in [("h1", up), ("h2", lo)] {
                if !(jet.h.is_finite() && jet.dh.is_finite() && jet.d2h.is_finite()) {
                    return Err(Error::Evaluation(format!(
                        "{which} not differentiable at |x'| = {rho}"
                    )));
                }
            }
            let ratio = (up.h - lo.h) / rho.powf(m);
            let g1 = up.dh.abs() / rho.powf(m - 1.0);
            let g2 = lo.dh.abs() / rho.powf(m - 1.0);
            ratio_min = ratio_min.min(ratio);
            ratio_max = ratio_max.max(ratio);
            grad_ratio_max = grad_ratio_max.max(g1).max(g2);
            h1_check.push(GapMargin {
                radius: rho,
                lower: ratio - k.kappa1,
                upper: k.kappa2 - ratio,
            });
            h2_check.push(SlopeMargin {
                radius: rho,
                upper_inclusion: k.kappa3 - g1,
                lower_inclusion: k.kappa3 - g2,
            });
            for (slot, jet) in norms.iter_mut().zip([up, lo]) {
                // |∇²h| for a radial profile is max(|h''|, |h'|/ρ).
                let hess = jet.d2h.abs().max(jet.dh.abs() / rho);
                slot[0] = slot[0].max(jet.h.abs());
                slot[1] = slot[1].max(jet.dh.abs());
                slot[2] = slot[2].max(hess);
            }
        }
        let c2_norm: f64 = norms.iter().flatten().sum();

        let estimated = match self.profile {
            ProfileSpec::Power { lambda, symmetric } => {
                let factor = if symmetric { 2.0 } else { 1.0 };
                let rm = rho_max;
                let one = lambda * (rm.powf(m) + m * rm.powf(m - 1.0) + m * (m - 1.0) * rm.powf(m - 2.0));
                EstimatedKappas {
                    kappa1: factor * lambda,
                    kappa2: factor * lambda,
                    kappa3: m * lambda,
                    kappa4: factor * one,
                    source: KappaSource::Exact,
                }
            }
            _ => EstimatedKappas {
                kappa1: ratio_min,
                kappa2: ratio_max,
                kappa3: grad_ratio_max,
                kappa4: c2_norm,
                source: KappaSource::Sampled,
            },
        };
        let h3_margin = k.kappa4 - c2_norm;
        let pass = h1_check.iter().all(|c| c.lower >= 0.0 && c.upper >= 0.0)
            && h2_check
                .iter()
                .all(|c| c.upper_inclusion >= 0.0 && c.lower_inclusion >= 0.0)
            && h3_margin >= 0.0;
        Ok(AdmissibilityReport {
            radius_max: rho_max,
            clipped_to_profile_domain: clipped,
            h1_check,
            h2_check,
            h3_margin,
            estimated_kappas: estimated,
            pass,
        })
    }

    /// Closed-form geometric constants for exponent `p` and Hölder parameter
    /// `β`. `mu0` is the mean-oscillation iteration constant, which has no
    /// numerical value of its own; without it the third length cap is not
    /// available.
    pub fn compute_constants(&self, p: f64, beta: f64, mu0: Option<f64>) -> Result<GeometryConstants> {
        if !(p > 1.0) {
            return param(format!("p must exceed 1, got {p}"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return param(format!("β must lie in (0, 1), got {beta}"));
        }
        if let Some(mu) = mu0 {
            if !(mu > 0.0 && mu < 1.0) {
                return param(format!("μ₀ must lie in (0, 1), got {mu}"));
            }
        }
        let m = self.m;
        let d = self.d as f64;
        let ConvexityBounds {
            kappa1: k1,
            kappa2: k2,
            kappa3: k3,
            kappa4: k4,
        } = self.kappa;
        let r0 = self.r0;

        let c0 = k1.powf(-1.0 / m) * f64::min(1.0, 2f64.powf(-(m + 1.0)) * k1 / k3);
        let c_tilde0 =
            k1.powf(-1.0 / m) * f64::min(1.0, k1 / k3 * (51840.0 + 4f64.powf(m + 1.0)).powf(-0.5));

        let e = 1.0 / (2.0 * m - 2.0);
        let cap_r01 = 2f64.powf(-m / (m - 1.0))
            * (k2 * k3).powf(-e)
            * [
                1.0,
                (k1.powf(1.0 / m) * c0).powf(e) / 2f64.powf(1.0 / (m - 1.0)),
                (k1 / k3).powf(e) / 2f64.powf((2.0 * m - 1.0) / (2.0 * m - 2.0)),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let cap_r02 = f64::min(
            2f64.powf(-(2.0 * m + 1.0) / (2.0 * m - 1.0)) * k3.powf(-1.0 / (m - 1.0)),
            (2f64.sqrt() * k2 * k4 * (d - 1.0).powi(2)).powf(-1.0 / m),
        );
        let j0 = (6.0 * d / p.min(2.0)).floor() as u32 + 1;
        let cap_r03 = mu0.map(|mu| {
            (12.0 / 13.0 * c_tilde0 * mu.powi(j0 as i32)).powf(1.0 / (m - 1.0)) * k2.powf(-1.0 / m)
        });

        let refined_r01 = f64::min(2f64.powf(1.0 / m), 2.0 * r0 / 3.0);
        let base = (f64::min(1.0, 4f64.powf(-(m + 1.0)) * k1) / (k2 * (k3 + k4) + k3 * (k3 + 1.0)))
            .powf(1.0 / (m - 1.0));
        let refined_r02 = if m < 3.0 {
            base * 6f64.powf(-(m + 2.0) / (m - 1.0)) / (d - 1.0).powf(2.0 / (m - 1.0))
        } else {
            base * 4f64.powf(-m / (m - 1.0))
        };
        let refined_r03 = 2f64.powf(-3.0 * (m + 1.0) / (m - 1.0)) * (k1 / k3).powf(1.0 / (m - 1.0));
        let refined_r04 = f64::min(r0.powf(1.0 / (1.0 - beta)), 2f64.powf(-1.0 / beta))
            / (c_tilde0 * (2.0 * k2).powf(1.0 / m));

        Ok(GeometryConstants {
            c0,
            c_tilde0,
            cap_r01,
            cap_r02,
            cap_r03,
            j0,
            refined_r01,
            refined_r02,
            refined_r03,
            refined_r04,
            beta,
        })
    }
}

/// Per-radius margins of the two-sided gap bound; both must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMargin {
    pub radius: f64,
    /// `(h₁ − h₂)/|x'|^m − κ₁`.
    pub lower: f64,
    /// `κ₂ − (h₁ − h₂)/|x'|^m`.
    pub upper: f64,
}

/// Per-radius margins of the slope bound for each inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeMargin {
    pub radius: f64,
    pub upper_inclusion: f64,
    pub lower_inclusion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSource {
    Exact,
    Sampled,
}

/// Tightest constants consistent with the sampled profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedKappas {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    /// Sum of the C² norms of both profiles (only second derivatives are
    /// carried exactly).
    pub kappa4: f64,
    pub source: KappaSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub radius_max: f64,
    pub clipped_to_profile_domain: bool,
    pub h1_check: Vec<GapMargin>,
    pub h2_check: Vec<SlopeMargin>,
    pub h3_margin: f64,
    pub estimated_kappas: EstimatedKappas,
    pub pass: bool,
}

/// Closed-form constants of the thin-gap estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    /// Radius coefficient of the height-equivalence neighbourhood.
    pub c0: f64,
    /// Radius coefficient of the oscillation neighbourhood `ϱ = (c̃₀/3)δ^{1/m}`.
    pub c_tilde0: f64,
    /// First admissible cap on the neck half-length.
    pub cap_r01: f64,
    /// Second admissible cap on the neck half-length.
    pub cap_r02: f64,
    /// Third cap; only present when the iteration constant μ₀ was supplied.
    pub cap_r03: Option<f64>,
    pub j0: u32,
    pub refined_r01: f64,
    pub refined_r02: f64,
    pub refined_r03: f64,
    pub refined_r04: f64,
    pub beta: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kappa() -> ConvexityBounds {
        ConvexityBounds {
            kappa1: 0.45,
            kappa2: 0.7,
            kappa3: 1.5,
            kappa4: 10.0,
        }
    }

    fn square(eps: f64, r0: f64) -> GapGeometry {
        GapGeometry::new(2, 4.0, eps, ProfileSpec::CurvilinearSquare { r_tilde0: 1.0 }, kappa(), r0)
            .unwrap()
    }

    #[test]
    fn delta_at_origin_is_eps() {
        for prof in [
            ProfileSpec::Flat,
            ProfileSpec::Power {
                lambda: 0.25,
                symmetric: true,
            },
            ProfileSpec::CurvilinearSquare { r_tilde0: 1.0 },
        ] {
            let g = GapGeometry::new(2, 4.0, 0.01, prof, kappa(), 0.25).unwrap();
            assert_eq!(g.eval_delta(&[0.0]).unwrap(), 0.01);
        }
    }

    #[test]
    fn delta_on_curvilinear_square() {
        // Independent evaluation of 0.01 + 2(1 − (1 − 0.3⁴)^{1/4}).
        let g = square(0.01, 0.25);
        let d = g.eval_delta(&[0.3]).unwrap();
        assert!((d - 0.014_062_360_327_029_657).abs() < 1e-15, "{d}");
        assert!((d - 0.014062).abs() < 1e-6);
    }

    #[test]
    fn power_profile_gap_closed_form() {
        let g = GapGeometry::new(
            2,
            4.0,
            1e-3,
            ProfileSpec::Power {
                lambda: 0.25,
                symmetric: true,
            },
            kappa(),
            0.25,
        )
        .unwrap();
        assert!((g.profile_gap(&[0.2]).unwrap() - 8e-4).abs() < 1e-18);
    }

    #[test]
    fn outside_profile_domain_is_an_error() {
        let g = square(0.01, 0.25);
        assert!(matches!(g.eval_delta(&[1.2]), Err(Error::Domain(_))));
        assert!(matches!(g.eval_delta(&[0.1, 0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let p = ProfileSpec::Flat;
        assert!(GapGeometry::new(2, 1.5, 0.1, p, kappa(), 1.0).is_err());
        assert!(GapGeometry::new(2, 4.0, 0.0, p, kappa(), 1.0).is_err());
        assert!(GapGeometry::new(2, 4.0, 0.1, p, kappa(), -1.0).is_err());
        assert!(matches!(
            GapGeometry::new(4, 4.0, 0.1, p, kappa(), 1.0),
            Err(Error::UnsupportedDimension(4))
        ));
        let mut k = kappa();
        k.kappa1 = 2.0;
        assert!(GapGeometry::new(2, 4.0, 0.1, p, k, 1.0).is_err());
    }

    #[test]
    fn curvilinear_derivatives_match_finite_differences() {
        let g = square(0.01, 0.25);
        for &x in &[0.05, 0.2, 0.5, 0.8] {
            let step = 1e-6;
            let f = |t: f64| g.radial_jet(Inclusion::Upper, t).unwrap();
            let fd1 = (f(x + step).h - f(x - step).h) / (2.0 * step);
            let fd2 = (f(x + step).dh - f(x - step).dh) / (2.0 * step);
            let j = f(x);
            assert!((fd1 - j.dh).abs() <= 1e-7 * j.dh.abs().max(1e-6), "x={x}");
            assert!((fd2 - j.d2h).abs() <= 1e-6 * j.d2h.abs().max(1e-6), "x={x}");
        }
    }

    #[test]
    fn normals_are_unit_and_outward() {
        let g = GapGeometry::new(
            3,
            4.0,
            0.01,
            ProfileSpec::CurvilinearSquare { r_tilde0: 1.0 },
            kappa(),
            0.25,
        )
        .unwrap();
        let x = [0.3, -0.2];
        let up = g.outward_normal(Inclusion::Upper, &x).unwrap();
        let lo = g.outward_normal(Inclusion::Lower, &x).unwrap();
        let n2 = |v: [f64; 3]| v.iter().map(|c| c * c).sum::<f64>();
        assert!((n2(up) - 1.0).abs() < 1e-15);
        assert!(up[2] > 0.0 && lo[2] < 0.0);
        // Upper normal is orthogonal to the tangent (e_i + ∂_i h e_d).
        let gh = g.grad_h(Inclusion::Upper, &x).unwrap();
        for i in 0..2 {
            let dot = up[i] + gh[i] * up[2];
            assert!(dot.abs() < 1e-15);
        }
    }

    #[test]
    fn hessian_of_radial_profile_in_3d() {
        let g = GapGeometry::new(
            3,
            4.0,
            0.01,
            ProfileSpec::Power {
                lambda: 1.0,
                symmetric: true,
            },
            kappa(),
            0.25,
        )
        .unwrap();
        // h = (x² + y²)², ∂xx h = 12x² + 4y², ∂xy h = 8xy.
        let (x, y) = (0.3, 0.4);
        let hm = g.hess_h(Inclusion::Upper, &[x, y]).unwrap();
        assert!((hm[0][0] - (12.0 * x * x + 4.0 * y * y)).abs() < 1e-14);
        assert!((hm[0][1] - 8.0 * x * y).abs() < 1e-14);
        assert!((hm[1][0] - hm[0][1]).abs() < 1e-15);
    }

    #[test]
    fn admissibility_power_profile_exact_kappas() {
        let k = ConvexityBounds {
            kappa1: 0.5,
            kappa2: 0.5,
            kappa3: 1.0,
            kappa4: 10.0,
        };
        let g = GapGeometry::new(
            2,
            4.0,
            1e-3,
            ProfileSpec::Power {
                lambda: 0.25,
                symmetric: true,
            },
            k,
            0.25,
        )
        .unwrap();
        let rep = g.check_admissibility(64).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.estimated_kappas.source, KappaSource::Exact);
        assert_eq!(rep.estimated_kappas.kappa1, 0.5);
        assert_eq!(rep.estimated_kappas.kappa2, 0.5);
    }

    #[test]
    fn admissibility_flat_profile_fails_lower_gap_bound() {
        let g = GapGeometry::new(2, 4.0, 1e-3, ProfileSpec::Flat, kappa(), 0.25).unwrap();
        let rep = g.check_admissibility(32).unwrap();
        assert!(!rep.pass);
        assert!(rep.h1_check.iter().all(|c| c.lower < 0.0));
    }

    #[test]
    fn admissibility_curvilinear_square() {
        let g = square(1e-3, 0.25);
        let rep = g.check_admissibility(128).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(!rep.clipped_to_profile_domain);
        let est = rep.estimated_kappas;
        assert_eq!(est.source, KappaSource::Sampled);
        assert!((est.kappa1 - 0.5).abs() < 1e-12, "{}", est.kappa1);
        assert!((est.kappa2 - 2.0 * (1.0 - 0.9375f64.powf(0.25)) / 0.0625).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(square(1e-3, 0.25).check_admissibility(8).is_err());
    }

    #[test]
    fn clipping_when_neck_exceeds_profile() {
        let rep = square(1e-3, 0.6).check_admissibility(32);
        let rep = rep.unwrap();
        assert!(rep.clipped_to_profile_domain);
        assert!(rep.radius_max < 1.0);
    }

    fn constants_geometry(k1: f64, k3: f64, m: f64) -> GapGeometry {
        GapGeometry::new(
            2,
            m,
            1e-3,
            ProfileSpec::Flat,
            ConvexityBounds {
                kappa1: k1,
                kappa2: 2.0,
                kappa3: k3,
                kappa4: 3.0,
            },
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn c0_hand_value() {
        let c = constants_geometry(1.0, 2.0, 3.0).compute_constants(2.0, 0.5, None).unwrap();
        assert!((c.c0 - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn c_tilde0_hand_value() {
        let c = constants_geometry(1.0, 1.0, 2.0).compute_constants(2.0, 0.5, None).unwrap();
        assert!((c.c_tilde0 - 51904f64.powf(-0.5)).abs() < 1e-16);
        assert!((c.c_tilde0 - 0.004389).abs() < 1e-6);
    }

    #[test]
    fn j0_formula() {
        let g = constants_geometry(1.0, 1.0, 4.0);
        assert_eq!(g.compute_constants(2.0, 0.5, None).unwrap().j0, 7);
        assert_eq!(g.compute_constants(1.5, 0.5, None).unwrap().j0, 9);
        assert_eq!(g.compute_constants(3.0, 0.5, None).unwrap().j0, 7);
    }

    #[test]
    fn third_cap_requires_mu0() {
        let g = constants_geometry(1.0, 1.0, 4.0);
        assert!(g.compute_constants(2.0, 0.5, None).unwrap().cap_r03.is_none());
        let c = g.compute_constants(2.0, 0.5, Some(0.5)).unwrap();
        let expect = (12.0 / 13.0 * c.c_tilde0 * 0.5f64.powi(7)).powf(1.0 / 3.0) * 2f64.powf(-0.25);
        assert!((c.cap_r03.unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn constants_parameter_errors() {
        let g = constants_geometry(1.0, 1.0, 4.0);
        assert!(g.compute_constants(1.0, 0.5, None).is_err());
        assert!(g.compute_constants(2.0, 1.0, None).is_err());
        assert!(g.compute_constants(2.0, 0.0, None).is_err());
    }

    #[test]
    fn constants_positive_and_bounded() {
        let g = constants_geometry(0.8, 1.3, 4.0);
        let c = g.compute_constants(2.5, 0.3, Some(0.4)).unwrap();
        for v in [
            c.c0,
            c.c_tilde0,
            c.cap_r01,
            c.cap_r02,
            c.cap_r03.unwrap(),
            c.refined_r01,
            c.refined_r02,
            c.refined_r03,
            c.refined_r04,
        ] {
            assert!(v > 0.0 && v.is_finite());
        }
        let bound = 0.8f64.powf(-0.25);
        assert!(c.c0 <= bound && c.c_tilde0 <= bound);
    }
}
