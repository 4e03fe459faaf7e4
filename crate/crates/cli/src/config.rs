use std::path::{Path, PathBuf};

use neckgap_core::barriers::{BarrierSpec, SampleGrid};
use neckgap_core::geometry::{ConvexityBounds, GapGeometry, ProfileSpec};
use neckgap_core::rates::{HarnackRadius, SweepPlan};
use neckgap_core::solver::SolverConfig;
use neckgap_core::weighted::{DiskGrid, FourierSeries, WeightFunction};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment, read from a single JSON document. Blocks a command does
/// not use may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub geometry: Option<GeometryBlock>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub barrier: Option<BarrierBlock>,
    #[serde(default)]
    pub weighted: Option<WeightedBlock>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub d: usize,
    pub m: f64,
    pub eps: f64,
    pub profile: ProfileSpec,
    pub kappa: ConvexityBounds,
    #[serde(rename = "R0")]
    pub r0: f64,
    /// Half-length `L` of the solved neck; defaults to `2R0`.
    #[serde(default)]
    pub half_length: Option<f64>,
    /// Radial samples of the admissibility check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub constants: ConstantsBlock,
}

fn default_samples() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsBlock {
    pub p: f64,
    pub beta: f64,
    pub mu0: Option<f64>,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        Self {
            p: 2.0,
            beta: 0.5,
            mu0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub eps: Vec<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_harnack")]
    pub harnack: HarnackRadius,
    /// Allowed `|fitted − theory|` before the run counts as a breach.
    #[serde(default = "default_rate_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub min_r_squared: Option<f64>,
}

fn default_tau() -> f64 {
    0.5
}
fn default_harnack() -> HarnackRadius {
    HarnackRadius::Scaled { factor: 1.0 }
}
fn default_rate_tolerance() -> f64 {
    0.08
}

/// Barrier parameters; `d`, `m` and `ε` come from the geometry block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub p: f64,
    pub tau: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBlock {
    #[serde(default)]
    pub supersolution: Option<BarrierParams>,
    #[serde(default)]
    pub subsolution: Option<BarrierParams>,
    #[serde(default = "default_sample_grid")]
    pub grid: SampleGrid,
    /// Random points for the finite-difference check of the closed-form
    /// derivatives.
    #[serde(default = "default_derivative_points")]
    pub derivative_points: usize,
    #[serde(default = "default_derivative_tolerance")]
    pub derivative_tolerance: f64,
}

fn default_sample_grid() -> SampleGrid {
    SampleGrid {
        n_radial: 200,
        n_height: 40,
    }
}
fn default_derivative_points() -> usize {
    1000
}
fn default_derivative_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedBlock {
    #[serde(default = "default_weighted_d")]
    pub d: usize,
    pub weight: WeightFunction,
    pub boundary: FourierSeries,
    #[serde(default = "default_eigen_n")]
    pub eigen_n: usize,
    #[serde(default)]
    pub disk: DiskGrid,
    #[serde(default = "default_quad_n")]
    pub quad_n: usize,
    /// Allowed relative gap between the fitted and predicted decay exponent.
    #[serde(default = "default_alpha_tolerance")]
    pub tolerance: f64,
}

fn default_weighted_d() -> usize {
    3
}
fn default_eigen_n() -> usize {
    512
}
fn default_quad_n() -> usize {
    256
}
fn default_alpha_tolerance() -> f64 {
    0.1
}

impl ExperimentConfig {
    /// Parses a config document; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if cfg.version != SCHEMA_VERSION {
            return Err(HarnessError::Config {
                path: "version".into(),
                message: format!("unsupported schema version {}, expected {SCHEMA_VERSION}", cfg.version),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), HarnessError> {
        let bytes = std::fs::read(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = std::str::from_utf8(&bytes).map_err(|e| HarnessError::Config {
            path: ".".into(),
            message: format!("config is not UTF-8: {e}"),
        })?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn geometry(&self) -> Result<GapGeometry, HarnessError> {
        let g = self.geometry.as_ref().ok_or_else(|| missing("geometry"))?;
        GapGeometry::new(g.d, g.m, g.eps, g.profile, g.kappa, g.r0).map_err(|e| invalid("geometry", e))
    }

    pub fn half_length(&self) -> Result<f64, HarnessError> {
        let g = self.geometry.as_ref().ok_or_else(|| missing("geometry"))?;
        Ok(g.half_length.unwrap_or(2.0 * g.r0))
    }

    pub fn solver(&self) -> Result<SolverConfig, HarnessError> {
        let s = self.solver.unwrap_or_default();
        s.validate().map_err(|e| invalid("solver", e))?;
        Ok(s)
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan, HarnessError> {
        let s = self.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
        let plan = SweepPlan {
            geometry: self.geometry()?,
            eps: s.eps.clone(),
            solver: self.solver()?,
            half_length: self.half_length()?,
            tau: s.tau,
            harnack: s.harnack,
        };
        plan.validate().map_err(|e| invalid("sweep", e))?;
        if !(s.tolerance > 0.0) {
            return Err(bad("sweep.tolerance", "must be positive"));
        }
        Ok(plan)
    }

    /// Supersolution and subsolution specs built against the geometry block.
    pub fn barrier_specs(&self) -> Result<(Option<BarrierSpec>, Option<BarrierSpec>), HarnessError> {
        let b = self.barrier.as_ref().ok_or_else(|| missing("barrier"))?;
        let g = self.geometry()?;
        if b.supersolution.is_none() && b.subsolution.is_none() {
            return Err(bad("barrier", "neither supersolution nor subsolution is configured"));
        }
        let sup = b
            .supersolution
            .map(|q| BarrierSpec::supersolution(g.d(), g.m(), q.p, q.tau, q.gamma))
            .transpose()
            .map_err(|e| invalid("barrier.supersolution", e))?;
        let sub = b
            .subsolution
            .map(|q| BarrierSpec::subsolution(g.m(), q.p, q.tau, q.gamma, g.eps()))
            .transpose()
            .map_err(|e| invalid("barrier.subsolution", e))?;
        if !(b.derivative_tolerance > 0.0) {
            return Err(bad("barrier.derivative_tolerance", "must be positive"));
        }
        Ok((sup, sub))
    }

    pub fn weighted_block(&self) -> Result<&WeightedBlock, HarnessError> {
        let w = self.weighted.as_ref().ok_or_else(|| missing("weighted"))?;
        if w.d != 3 {
            return Err(bad("weighted.d", &format!("only d = 3 is supported, got {}", w.d)));
        }
        if w.eigen_n < 8 {
            return Err(bad("weighted.eigen_n", "needs at least 8 points"));
        }
        if w.disk.n_r < 8 || w.disk.n_theta < 8 || !(w.disk.inner_radius > 0.0 && w.disk.inner_radius < 1.0) {
            return Err(bad("weighted.disk", "needs n_r, n_theta ≥ 8 and 0 < inner_radius < 1"));
        }
        if !(w.tolerance > 0.0) {
            return Err(bad("weighted.tolerance", "must be positive"));
        }
        Ok(w)
    }
}

fn missing(block: &str) -> HarnessError {
    HarnessError::Config {
        path: block.into(),
        message: "block is required by this command".into(),
    }
}

fn bad(path: &str, message: &str) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn invalid(path: &str, e: neckgap_core::Error) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        message: e.to_string(),
    }
}
