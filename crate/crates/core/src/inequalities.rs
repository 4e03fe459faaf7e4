//! Vector inequalities for the p-Laplace flux map `ξ ↦ |ξ|^{p−2}ξ`, used as
//! property-test oracles for the discrete operators.

use rand::Rng;
use serde::Serialize;

use crate::error::{param, Result};

/// Relative slack allowed for rounding; several inequalities are attained
/// with equality (e.g. `ξ₂ = −ξ₁` for `p ≥ 2`).
pub const ROUNDING_SLACK: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `|ξ|^σ ξ`.
fn power_map(xi: &[f64], sigma: f64) -> Vec<f64> {
    let n = norm(xi);
    let s = if n == 0.0 { 0.0 } else { n.powf(sigma) };
    xi.iter().map(|x| s * x).collect()
}

/// `⟨|ξ₁|^{p−2}ξ₁ − |ξ₂|^{p−2}ξ₂, ξ₁ − ξ₂⟩`.
pub fn monotonicity_gap(xi1: &[f64], xi2: &[f64], p: f64) -> f64 {
    let a = power_map(xi1, p - 2.0);
    let b = power_map(xi2, p - 2.0);
    a.iter()
        .zip(&b)
        .zip(xi1.iter().zip(xi2))
        .map(|((ai, bi), (x, y))| (ai - bi) * (x - y))
        .sum()
}

/// Lower bound for [`monotonicity_gap`]:
/// `(p−1)2^{(p−2)/2}(|ξ₁|²+|ξ₂|²)^{(p−2)/2}|ξ₁−ξ₂|²` for `1 < p < 2` and
/// `½(|ξ₁|^{p−2}+|ξ₂|^{p−2})|ξ₁−ξ₂|²` for `p ≥ 2`.
pub fn monotonicity_lower_bound(xi1: &[f64], xi2: &[f64], p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return param(format!("p must exceed 1, got {p}"));
    }
    let d2 = diff_norm(xi1, xi2).powi(2);
    let (n1, n2) = (norm(xi1), norm(xi2));
    if p < 2.0 {
        let s = n1 * n1 + n2 * n2;
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok((p - 1.0) / 2f64.powf(0.5 * (2.0 - p)) * s.powf(0.5 * (p - 2.0)) * d2)
    } else {
        Ok(0.5 * (n1.powf(p - 2.0) + n2.powf(p - 2.0)) * d2)
    }
}

/// Lower constant `c̲_σ` of the two-sided power-map bound.
pub fn c_lower(sigma: f64) -> Result<f64> {
    if !(sigma > -1.0) {
        return param(format!("σ must exceed −1, got {sigma}"));
    }
    Ok(if sigma <= 0.0 {
        1.0 + sigma
    } else {
        5f64.powf(-(1.0 + 0.5 * sigma))
    })
}

/// Upper constant `c̄_σ` of the two-sided power-map bound.
pub fn c_upper(sigma: f64) -> Result<f64> {
    if !(sigma > -1.0) {
        return param(format!("σ must exceed −1, got {sigma}"));
    }
    Ok(if sigma < 0.0 {
        f64::max(2.0, 10f64.powf(0.5 * sigma.abs()))
    } else {
        (1.0 + sigma) * 2f64.powf(0.5 * sigma)
    })
}

/// `||ξ₁|^σξ₁ − |ξ₂|^σξ₂| / (|ξ₁−ξ₂|(|ξ₁|²+|ξ₂|²)^{σ/2})`; `None` when
/// `ξ₁ = ξ₂`.
pub fn power_map_ratio(xi1: &[f64], xi2: &[f64], sigma: f64) -> Option<f64> {
    let dn = diff_norm(xi1, xi2);
    if dn == 0.0 {
        return None;
    }
    let s = norm(xi1).powi(2) + norm(xi2).powi(2);
    let num = diff_norm(&power_map(xi1, sigma), &power_map(xi2, sigma));
    Some(num / (dn * s.powf(0.5 * sigma)))
}

/// Tally of a randomized inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleTally {
    pub pairs: usize,
    pub failures: usize,
    /// Smallest observed `lhs / bound` (`≥ 1` means the inequality held).
    pub worst_ratio: f64,
}

/// Random pair of vectors in `ℝ^d`: log-uniform magnitudes over twelve
/// decades, with one pair in four a small perturbation or a reflection of
/// the other.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R, d: usize) -> (Vec<f64>, Vec<f64>) {
    let vec_of = |rng: &mut R| -> Vec<f64> {
        let scale = 10f64.powf(rng.gen_range(-6.0..6.0));
        (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
    };
    let a = vec_of(rng);
    let b = match rng.gen_range(0..8) {
        0 => {
            let t = 10f64.powf(rng.gen_range(-8.0..-1.0));
            a.iter().map(|x| x * (1.0 + t * rng.gen_range(-1.0..1.0))).collect()
        }
        1 => a.iter().map(|x| -x * rng.gen_range(0.5..2.0)).collect(),
        _ => vec_of(rng),
    };
    (a, b)
}

/// Checks the monotonicity lower bound on `pairs` random pairs.
pub fn check_monotonicity<R: Rng + ?Sized>(rng: &mut R, pairs: usize, d: usize, p: f64) -> Result<OracleTally> {
    let mut tally = OracleTally {
        pairs,
        failures: 0,
        worst_ratio: f64::INFINITY,
    };
    for _ in 0..pairs {
        let (a, b) = random_pair(rng, d);
        let lhs = monotonicity_gap(&a, &b, p);
        let rhs = monotonicity_lower_bound(&a, &b, p)?;
        if rhs > 0.0 {
            tally.worst_ratio = tally.worst_ratio.min(lhs / rhs);
        }
        if lhs < rhs * (1.0 - ROUNDING_SLACK) {
            tally.failures += 1;
        }
    }
    Ok(tally)
}

/// Checks `c̲_σ ≤ ratio ≤ c̄_σ` on `pairs` random pairs; `worst_ratio` is the
/// smaller of `ratio/c̲_σ` and `c̄_σ/ratio`.
pub fn check_power_map_bounds<R: Rng + ?Sized>(
    rng: &mut R,
    pairs: usize,
    d: usize,
    sigma: f64,
) -> Result<OracleTally> {
    let (lo, hi) = (c_lower(sigma)?, c_upper(sigma)?);
    let mut tally = OracleTally {
        pairs,
        failures: 0,
        worst_ratio: f64::INFINITY,
    };
    for _ in 0..pairs {
        let (a, b) = random_pair(rng, d);
        let Some(r) = power_map_ratio(&a, &b, sigma) else {
            continue;
        };
        tally.worst_ratio = tally.worst_ratio.min(r / lo).min(hi / r);
        if r < lo * (1.0 - ROUNDING_SLACK) || r > hi * (1.0 + ROUNDING_SLACK) {
            tally.failures += 1;
        }
    }
    Ok(tally)
}
