//! Regularized insulated p-Laplace problem in the two-dimensional neck.
//!
//! The neck `{|x₁| < L, −ε/2 + h₂(x₁) < x₂ < ε/2 + h₁(x₁)}` is flattened onto
//! the rectangle `[−L, L] × [0, 1]` by `x₁ = y₁`, `x₂ = −ε/2 + h₂(y₁) + y₂δ(y₁)`,
//! whose Jacobian `[[1, 0], [s, δ]]` with `s = h₂' + y₂δ'` has determinant
//! `δ`. Physical gradients are `g₁ = u_{y₁} − (s/δ)u_{y₂}`, `g₂ = u_{y₂}/δ`.
//!
//! The weak form `∫ (ς + |∇u|²)^{(p−2)/2} ∇u·∇φ dx = 0` is discretized with
//! bilinear elements on the flattened tensor grid (2×2 Gauss points, exact
//! geometry at each point). The walls carry the natural zero-conormal-flux
//! condition; the lateral ends are Dirichlet.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{GapGeometry, Inclusion};
use crate::linalg::{solve_spd, SymBandMatrix};

/// Sufficient-decrease constant of the residual line search.
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-8;

/// Lateral data `±lateral_value` at `x₁ = ±L`, or Dirichlet data from a
/// radial p-harmonic function on the whole boundary (used for manufactured
/// solution studies).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryMode {
    Lateral,
    Manufactured { center: [f64; 2] },
}

impl Default for BoundaryMode {
    fn default() -> Self {
        BoundaryMode::Lateral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub p: f64,
    /// Regularization `ς`; `None` selects `10⁻¹²·(lateral_value/L)²`.
    pub sigma: Option<f64>,
    pub tol_nonlinear: f64,
    pub max_outer: usize,
    /// Step shrink factor of the backtracking line search.
    pub damping: f64,
    pub n1: usize,
    pub n2: usize,
    pub grading_q: f64,
    pub lateral_value: f64,
    pub boundary: BoundaryMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            sigma: None,
            tol_nonlinear: 1e-10,
            max_outer: 200,
            damping: 0.5,
            n1: 256,
            n2: 32,
            grading_q: 1.5,
            lateral_value: 1.0,
            boundary: BoundaryMode::Lateral,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return param(format!("p must exceed 1, got {}", self.p));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return param(format!("regularization ς must be positive, got {s}"));
            }
        }
        if !(self.tol_nonlinear > 0.0 && self.tol_nonlinear <= 1e-2) {
            return param(format!("tol_nonlinear must lie in (0, 1e-2], got {}", self.tol_nonlinear));
        }
        if self.max_outer == 0 {
            return param("max_outer must be at least 1");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return param(format!("damping must lie in (0, 1), got {}", self.damping));
        }
        if self.n1 < 8 || self.n2 < 8 {
            return param(format!("grid counts must be at least 8, got {}×{}", self.n1, self.n2));
        }
        if self.n1 % 2 != 0 {
            return param(format!("n1 must be even so that x₁ = 0 is a grid line, got {}", self.n1));
        }
        if !(self.grading_q >= 1.0) {
            return param(format!("grading exponent must be ≥ 1, got {}", self.grading_q));
        }
        if !(self.lateral_value > 0.0) {
            return param(format!("lateral_value must be positive, got {}", self.lateral_value));
        }
        Ok(())
    }
}

/// Geometric data of the flattening map along `y₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnGeometry {
    pub y1: f64,
    pub delta: f64,
    pub h2: f64,
    pub dh1: f64,
    pub dh2: f64,
}

impl ColumnGeometry {
    fn at(geometry: &GapGeometry, y1: f64) -> Result<Self> {
        let pr = geometry.profiles_1d(y1)?;
        let delta = geometry.eps() + pr.h1 - pr.h2;
        if !(delta > 0.0) {
            return Err(Error::Geometry(format!(
                "gap width δ = {delta} ≤ 0 at x₁ = {y1}: inclusions overlap"
            )));
        }
        Ok(Self {
            y1,
            delta,
            h2: pr.h2,
            dh1: pr.dh1,
            dh2: pr.dh2,
        })
    }

    /// `s = ∂x₂/∂y₁` at relative height `y₂`.
    pub fn shear(&self, y2: f64) -> f64 {
        self.dh2 + y2 * (self.dh1 - self.dh2)
    }

    pub fn x2(&self, eps: f64, y2: f64) -> f64 {
        -0.5 * eps + self.h2 + y2 * self.delta
    }
}

/// Gauss points on `[−1, 1]`.
const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

#[derive(Debug, Clone, Copy)]
struct QuadPoint {
    /// Gauss weight × cell area in `y` × `δ`: the physical area element.
    weight: f64,
    /// Physical gradients of the four local shape functions, ordered
    /// `(i, j), (i, j+1), (i+1, j), (i+1, j+1)`.
    grads: [[f64; 2]; 4],
}

/// Tensor grid on the flattened neck.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformedGrid {
    pub geometry: GapGeometry,
    pub half_length: f64,
    pub n1: usize,
    pub n2: usize,
    pub grading_q: f64,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// Map data at each `y₁` grid line.
    pub columns: Vec<ColumnGeometry>,
    /// Map data at each cell-center `y₁`.
    pub centers: Vec<ColumnGeometry>,
    #[serde(skip)]
    quad: Vec<[QuadPoint; 4]>,
}

impl TransformedGrid {
    pub fn n_nodes(&self) -> usize {
        (self.n1 + 1) * (self.n2 + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.n2 + 1) + j
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    /// Physical coordinates of node `(i, j)`.
    pub fn node_x(&self, i: usize, j: usize) -> [f64; 2] {
        let c = &self.columns[i];
        [c.y1, c.x2(self.geometry.eps(), self.y2[j])]
    }

    /// Physical coordinates of the center of cell `(i, j)`.
    pub fn cell_x(&self, i: usize, j: usize) -> [f64; 2] {
        let c = &self.centers[i];
        let y2 = 0.5 * (self.y2[j] + self.y2[j + 1]);
        [c.y1, c.x2(self.geometry.eps(), y2)]
    }

    /// `det ∂x/∂y` at each grid line.
    pub fn jacobian_det(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.delta).collect()
    }

    /// Bandwidth of the hierarchical-basis system.
    fn bandwidth(&self) -> usize {
        2 * self.n2 + 2
    }
}

/// Builds the graded tensor grid `y₁ = sign(s)L|s|^q`, `s` uniform on
/// `[−1, 1]`, `y₂` uniform on `[0, 1]`. The neck must lie inside the ball
/// `|x'| ≤ 2R₀` on which the geometry hypotheses are posed.
pub fn build_grid(geometry: &GapGeometry, config: &SolverConfig, half_length: f64) -> Result<TransformedGrid> {
    config.validate()?;
    if geometry.d() != 2 {
        return Err(Error::UnsupportedDimension(geometry.d()));
    }
    if !(half_length > 0.0) {
        return param(format!("neck half-length must be positive, got {half_length}"));
    }
    if half_length > 2.0 * geometry.r0() {
        return Err(Error::Precondition(format!(
            "neck half-length {half_length} exceeds 2R₀ = {}",
            2.0 * geometry.r0()
        )));
    }
    if half_length >= geometry.profile().domain_radius() {
        return Err(Error::Precondition(format!(
            "neck half-length {half_length} reaches the profile boundary {}",
            geometry.profile().domain_radius()
        )));
    }
    let (n1, n2, q) = (config.n1, config.n2, config.grading_q);
    let y1: Vec<f64> = (0..=n1)
        .map(|i| {
            // Exact zero and exact symmetry about the middle line.
            let k = i as isize - (n1 / 2) as isize;
            let s = k.unsigned_abs() as f64 / (n1 / 2) as f64;
            let v = half_length * s.powf(q);
            if k < 0 {
                -v
            } else {
                v
            }
        })
        .collect();
    let y2: Vec<f64> = (0..=n2).map(|j| j as f64 / n2 as f64).collect();
    let columns = y1
        .iter()
        .map(|&t| ColumnGeometry::at(geometry, t))
        .collect::<Result<Vec<_>>>()?;
    let centers = (0..n1)
        .map(|i| ColumnGeometry::at(geometry, 0.5 * (y1[i] + y1[i + 1])))
        .collect::<Result<Vec<_>>>()?;

    let mut quad = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        let (a1, b1) = (y1[i], y1[i + 1]);
        let h1 = b1 - a1;
        let gauss_cols = GAUSS
            .iter()
            .map(|&g| ColumnGeometry::at(geometry, 0.5 * (a1 + b1) + 0.5 * h1 * g))
            .collect::<Result<Vec<_>>>()?;
        for j in 0..n2 {
            let (a2, b2) = (y2[j], y2[j + 1]);
            let h2 = b2 - a2;
            let mut pts = [QuadPoint {
                weight: 0.0,
                grads: [[0.0; 2]; 4],
            }; 4];
            for (qa, &ga) in GAUSS.iter().enumerate() {
                let col = &gauss_cols[qa];
                let xi = 0.5 * (1.0 + ga);
                for (qb, &gb) in GAUSS.iter().enumerate() {
                    let eta = 0.5 * (1.0 + gb);
                    let yy2 = a2 + eta * h2;
                    let s = col.shear(yy2);
                    // ∂φ/∂y for the bilinear shape functions.
                    let dy = [
                        [-(1.0 - eta) / h1, -(1.0 - xi) / h2],
                        [-eta / h1, (1.0 - xi) / h2],
                        [(1.0 - eta) / h1, -xi / h2],
                        [eta / h1, xi / h2],
                    ];
                    let mut grads = [[0.0; 2]; 4];
                    for (g, d) in grads.iter_mut().zip(dy) {
                        g[0] = d[0] - s / col.delta * d[1];
                        g[1] = d[1] / col.delta;
                    }
                    pts[2 * qa + qb] = QuadPoint {
                        weight: 0.25 * h1 * h2 * col.delta,
                        grads,
                    };
                }
            }
            quad.push(pts);
        }
    }
    Ok(TransformedGrid {
        geometry: geometry.clone(),
        half_length,
        n1,
        n2,
        grading_q: q,
        y1,
        y2,
        columns,
        centers,
        quad,
    })
}

/// Which linearization to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Frozen coefficient `k(|∇u|)I`.
    Kacanov,
    /// Exact Jacobian `kI + (p−2)(ς+|g|²)^{(p−4)/2} g gᵀ`.
    Newton,
}

struct Assembly {
    residual: Vec<f64>,
    matrix: Option<SymBandMatrix>,
    energy: f64,
}


/// Coefficients in the hierarchical basis used by the outer iteration: at
/// `node(i, 0)` the column function (the `y₁` hat, constant across the gap)
/// and at `node(i, j > 0)` the deviation `u(i, j) − cᵢ`.
///
/// Couplings across a thin gap are stiff. In the nodal basis they multiply
/// O(1) values, so rounding alone leaves a residual floor far above the
/// solver tolerance; in this basis they only ever see the small deviations.
/// Column values are kept as the left value plus per-cell jumps `cᵢ₊₁ − cᵢ`:
/// on the plateaus near `±L` the jumps are many orders below the values, and
/// forming them by subtraction would lose them to rounding.
#[derive(Debug, Clone, Default)]
struct ColumnSplit {
    c0: f64,
    jumps: Vec<f64>,
    /// Deviations by node; entries at `node(i, 0)` are unused and zero.
    dev: Vec<f64>,
}

impl ColumnSplit {
    fn from_values(grid: &TransformedGrid, u: &[f64]) -> Self {
        let stride = grid.n2 + 1;
        let dev = (0..grid.n_nodes())
            .map(|k| if k % stride == 0 { 0.0 } else { u[k] - u[k - k % stride] })
            .collect();
        let jumps = (0..grid.n1).map(|i| u[grid.node(i + 1, 0)] - u[grid.node(i, 0)]).collect();
        Self {
            c0: u[grid.node(0, 0)],
            jumps,
            dev,
        }
    }

    fn matches(&self, grid: &TransformedGrid) -> bool {
        self.dev.len() == grid.n_nodes() && self.jumps.len() == grid.n1
    }

    fn columns(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.jumps.len() + 1);
        c.push(self.c0);
        for (i, d) in self.jumps.iter().enumerate() {
            c.push(c[i] + d);
        }
        c
    }

    fn values(&self, grid: &TransformedGrid) -> Vec<f64> {
        let stride = grid.n2 + 1;
        let c = self.columns();
        (0..grid.n_nodes())
            .map(|k| c[k / stride] + self.dev[k])
            .collect()
    }

    /// Adds `t·dir`, with `dir` in the hierarchical basis.
    fn step(&self, grid: &TransformedGrid, dir: &[f64], t: f64) -> Self {
        let col = |i: usize| dir[grid.node(i, 0)];
        let stride = grid.n2 + 1;
        Self {
            c0: self.c0 + t * col(0),
            jumps: self
                .jumps
                .iter()
                .enumerate()
                .map(|(i, d)| d + t * (col(i + 1) - col(i)))
                .collect(),
            dev: self
                .dev
                .iter()
                .zip(dir)
                .enumerate()
                .map(|(k, (a, b))| if k % stride == 0 { 0.0 } else { a + t * b })
                .collect(),
        }
    }

    /// Jump `cᵢ₊₁ − cᵢ` of the column functions across cell `(i, j)` and the
    /// deviations at its corners relative to the first corner, in
    /// `(i, j), (i, j+1), (i+1, j), (i+1, j+1)` order.
    fn cell_differences(&self, grid: &TransformedGrid, i: usize, j: usize) -> (f64, [f64; 4]) {
        let dev = |ii: usize, jj: usize| self.dev[grid.node(ii, jj)];
        let d0 = dev(i, j);
        (
            self.jumps[i],
            [0.0, dev(i, j + 1) - d0, dev(i + 1, j) - d0, dev(i + 1, j + 1) - d0],
        )
    }
}

/// Hierarchical basis functions supported on cell `(i, j)`: the two column
/// functions followed by the deviation functions, as indices and
/// combinations of the local nodal shape functions. The column functions'
/// combinations are unused; their gradients are `(∓1/h₁, 0)` exactly.
fn local_basis(grid: &TransformedGrid, i: usize, j: usize) -> ([usize; 6], [usize; 6], usize) {
    let mut idx = [grid.node(i, 0), grid.node(i + 1, 0), 0, 0, 0, 0];
    let mut corner = [0; 6];
    let mut n = 2;
    for (a, (ii, jj)) in [(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)].into_iter().enumerate() {
        if jj > 0 {
            idx[n] = grid.node(ii, jj);
            corner[n] = a;
            n += 1;
        }
    }
    (idx, corner, n)
}

fn assemble(grid: &TransformedGrid, u: &ColumnSplit, p: f64, sigma: f64, kind: Option<StepKind>) -> Assembly {
    let n = grid.n_nodes();
    let mut residual = vec![0.0; n];
    let mut matrix = kind.map(|_| SymBandMatrix::zeros(n, grid.bandwidth()));
    let mut energy = 0.0;
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let h1 = grid.y1[i + 1] - grid.y1[i];
            // Shape gradients sum to zero, so the column jump acts through the
            // exact column-function gradient and deviations through corner
            // differences; no O(1) value meets a gap-scale derivative.
            let (db, du) = u.cell_differences(grid, i, j);
            let (idx, corner, nb) = local_basis(grid, i, j);
            for qp in &grid.quad[grid.cell(i, j)] {
                let mut g = [db / h1, 0.0];
                for (a, gr) in qp.grads.iter().enumerate().skip(1) {
                    g[0] += du[a] * gr[0];
                    g[1] += du[a] * gr[1];
                }
                let t = sigma + g[0] * g[0] + g[1] * g[1];
                let k = t.powf(0.5 * (p - 2.0));
                energy += qp.weight * t.powf(0.5 * p) / p;
                let mut bg = [[-1.0 / h1, 0.0], [1.0 / h1, 0.0], [0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]];
                for b in 2..nb {
                    bg[b] = qp.grads[corner[b]];
                }
                for a in 0..nb {
                    residual[idx[a]] += qp.weight * k * (g[0] * bg[a][0] + g[1] * bg[a][1]);
                }
                if let Some(mat) = matrix.as_mut() {
                    let k2 = match kind {
                        Some(StepKind::Newton) => (p - 2.0) * t.powf(0.5 * (p - 4.0)),
                        _ => 0.0,
                    };
                    for a in 0..nb {
                        let ga = bg[a];
                        let gda = g[0] * ga[0] + g[1] * ga[1];
                        for b in 0..=a {
                            let gb = bg[b];
                            let gdb = g[0] * gb[0] + g[1] * gb[1];
                            let v = qp.weight * (k * (ga[0] * gb[0] + ga[1] * gb[1]) + k2 * gda * gdb);
                            mat.add(idx[a], idx[b], v);
                        }
                    }
                }
            }
        }
    }
    Assembly {
        residual,
        matrix,
        energy,
    }
}

/// Per-outer-iteration record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub outer_iterations: usize,
    pub step_kinds: Vec<StepKind>,
    pub linear_refinements: Vec<usize>,
    pub linear_residuals: Vec<f64>,
    pub energies: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

/// A converged solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteField {
    pub grid: TransformedGrid,
    pub p: f64,
    pub sigma: f64,
    pub lateral_value: f64,
    pub boundary: BoundaryMode,
    /// Nodal values, `y₂` fastest.
    pub u: Vec<f64>,
    /// Physical gradient at each cell center.
    pub grad_phys: Vec<[f64; 2]>,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub trace: IterationTrace,
    #[serde(skip)]
    split: ColumnSplit,
}

/// Radial p-harmonic function in the plane: `r^{(p−2)/(p−1)}`, or `ln r`
/// for `p = 2`.
pub fn radial_p_harmonic(p: f64, center: [f64; 2], x: [f64; 2]) -> f64 {
    let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
    if p == 2.0 {
        r.ln()
    } else {
        r.powf((p - 2.0) / (p - 1.0))
    }
}

fn dirichlet_nodes(grid: &TransformedGrid, mode: BoundaryMode) -> Vec<bool> {
    let mut fixed = vec![false; grid.n_nodes()];
    for j in 0..=grid.n2 {
        fixed[grid.node(0, j)] = true;
        fixed[grid.node(grid.n1, j)] = true;
    }
    if let BoundaryMode::Manufactured { .. } = mode {
        for i in 0..=grid.n1 {
            fixed[grid.node(i, 0)] = true;
            fixed[grid.node(i, grid.n2)] = true;
        }
    }
    fixed
}

/// Initial iterate satisfying the Dirichlet data. Lateral mode uses the
/// lubrication profile `∫δ^{−1/(p−1)}`, which is exact for parallel walls.
fn initial_guess(grid: &TransformedGrid, config: &SolverConfig) -> Vec<f64> {
    let mut u = vec![0.0; grid.n_nodes()];
    match config.boundary {
        BoundaryMode::Lateral => {
            let v = config.lateral_value;
            let e = -1.0 / (config.p - 1.0);
            let mut cum = vec![0.0; grid.n1 + 1];
            for i in 0..grid.n1 {
                let dy = grid.y1[i + 1] - grid.y1[i];
                // Midpoint and endpoint values (Simpson) of δ^{−1/(p−1)}.
                let f0 = grid.columns[i].delta.powf(e);
                let fm = grid.centers[i].delta.powf(e);
                let f1 = grid.columns[i + 1].delta.powf(e);
                cum[i + 1] = cum[i] + dy * (f0 + 4.0 * fm + f1) / 6.0;
            }
            let total = cum[grid.n1];
            // Odd by construction: measure from the middle line.
            let mid = cum[grid.n1 / 2];
            for i in 0..=grid.n1 {
                let k = grid.n1 - i;
                let val = if i <= grid.n1 / 2 {
                    -v * (mid - cum[i]) / (0.5 * total)
                } else {
                    v * (cum[i] - cum[k]) / total
                };
                let val = if i == grid.n1 / 2 { 0.0 } else { val };
                for j in 0..=grid.n2 {
                    u[grid.node(i, j)] = val;
                }
            }
            for j in 0..=grid.n2 {
                u[grid.node(0, j)] = -v;
                u[grid.node(grid.n1, j)] = v;
            }
        }
        BoundaryMode::Manufactured { center } => {
            let exact = |i: usize, j: usize| radial_p_harmonic(config.p, center, grid.node_x(i, j));
            let l = grid.half_length;
            for i in 0..=grid.n1 {
                let w = (grid.y1[i] + l) / (2.0 * l);
                for j in 0..=grid.n2 {
                    u[grid.node(i, j)] = (1.0 - w) * exact(0, j) + w * exact(grid.n1, j);
                }
            }
            for i in 0..=grid.n1 {
                for j in [0, grid.n2] {
                    u[grid.node(i, j)] = exact(i, j);
                }
            }
        }
    }
    u
}

fn split_norms(r: &[f64], fixed: &[bool]) -> (f64, f64) {
    let (mut free, mut reac) = (0.0, 0.0);
    for (v, &f) in r.iter().zip(fixed) {
        if f {
            reac += v * v;
        } else {
            free += v * v;
        }
    }
    (free.sqrt(), reac.sqrt())
}

/// Relative residual `‖R_free‖ / ‖R_Dirichlet‖`; the Dirichlet reactions are
/// the boundary fluxes and set the scale.
fn relative_residual(r: &[f64], fixed: &[bool]) -> f64 {
    let (free, reac) = split_norms(r, fixed);
    if reac > 0.0 {
        free / reac
    } else if free == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Default regularization `10⁻¹²·(lateral_value/L)²`.
pub fn default_sigma(config: &SolverConfig, half_length: f64) -> f64 {
    1e-12 * (config.lateral_value / half_length).powi(2)
}

/// Solves the flattened problem. The outer loop takes Kačanov steps for
/// `p ≤ 2` (falling back to Newton when a step fails the line search) and
/// damped Newton steps for `p > 2`; every accepted step reduces the free
/// residual norm.
pub fn solve(grid: &TransformedGrid, config: &SolverConfig) -> Result<DiscreteField> {
    config.validate()?;
    if grid.n1 != config.n1 || grid.n2 != config.n2 {
        return param(format!(
            "grid is {}×{} but the configuration asks for {}×{}",
            grid.n1, grid.n2, config.n1, config.n2
        ));
    }
    let p = config.p;
    let sigma = config.sigma.unwrap_or_else(|| default_sigma(config, grid.half_length));
    let fixed = dirichlet_nodes(grid, config.boundary);
    let mut u = ColumnSplit::from_values(grid, &initial_guess(grid, config));
    let mut trace = IterationTrace::default();
    let mut history = Vec::new();

    let mut asm = assemble(grid, &u, p, sigma, None);
    let mut rel = relative_residual(&asm.residual, &fixed);
    let mut rnorm = split_norms(&asm.residual, &fixed).0;
    history.push(rel);
    trace.energies.push(asm.energy);

    let preferred = if p <= 2.0 { StepKind::Kacanov } else { StepKind::Newton };
    while rel > config.tol_nonlinear {
        if trace.outer_iterations >= config.max_outer {
            return Err(Error::NonConvergence {
                iterations: trace.outer_iterations,
                last_residual: rel,
                residual_history: history,
            });
        }
        let mut accepted = None;
        let kinds: &[StepKind] = match preferred {
            StepKind::Kacanov => &[StepKind::Kacanov, StepKind::Newton],
            StepKind::Newton => &[StepKind::Newton],
        };
        for &kind in kinds {
            let lin = assemble(grid, &u, p, sigma, Some(kind));
            let mut mat = lin.matrix.expect("matrix requested");
            let mut rhs: Vec<f64> = lin.residual.iter().map(|v| -v).collect();
            for (k, &f) in fixed.iter().enumerate() {
                if f {
                    mat.set_identity_row(k);
                    rhs[k] = 0.0;
                }
            }
            let (dir, info) = solve_spd(&mat, &rhs)?;
            let mut t = 1.0;
            while t >= MIN_STEP {
                let trial = u.step(grid, &dir, t);
                let trial_asm = assemble(grid, &trial, p, sigma, None);
                let trial_norm = split_norms(&trial_asm.residual, &fixed).0;
                if trial_norm <= (1.0 - ARMIJO_C * t) * rnorm {
                    accepted = Some((trial, trial_asm, t, kind, info));
                    break;
                }
                t *= config.damping;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((trial, trial_asm, t, kind, info)) = accepted else {
            return Err(Error::NonConvergence {
                iterations: trace.outer_iterations,
                last_residual: rel,
                residual_history: history,
            });
        };
        u = trial;
        asm = trial_asm;
        rnorm = split_norms(&asm.residual, &fixed).0;
        rel = relative_residual(&asm.residual, &fixed);
        history.push(rel);
        trace.outer_iterations += 1;
        trace.step_kinds.push(kind);
        trace.linear_refinements.push(info.refinements);
        trace.linear_residuals.push(info.relative_residual);
        trace.energies.push(asm.energy);
        trace.step_sizes.push(t);
    }

    let grad_phys = split_gradients(grid, &u);
    Ok(DiscreteField {
        grid: grid.clone(),
        p,
        sigma,
        lateral_value: config.lateral_value,
        boundary: config.boundary,
        u: u.values(grid),
        grad_phys,
        residual_history: history,
        converged: true,
        trace,
        split: u,
    })
}

/// Physical gradient at cell centers from bilinear differences and the
/// chain rule through the flattening map.
pub fn cell_gradients(grid: &TransformedGrid, u: &[f64]) -> Vec<[f64; 2]> {
    split_gradients(grid, &ColumnSplit::from_values(grid, u))
}

fn split_gradients(grid: &TransformedGrid, u: &ColumnSplit) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.n1 {
        let h1 = grid.y1[i + 1] - grid.y1[i];
        let c = &grid.centers[i];
        for j in 0..grid.n2 {
            let h2 = grid.y2[j + 1] - grid.y2[j];
            let (db, [_, b, cc, d]) = u.cell_differences(grid, i, j);
            let uy1 = db / h1 + 0.5 * (cc + (d - b)) / h1;
            let uy2 = 0.5 * (b + (d - cc)) / h2;
            let s = c.shear(0.5 * (grid.y2[j] + grid.y2[j + 1]));
            out.push([uy1 - s / c.delta * uy2, uy2 / c.delta]);
        }
    }
    out
}

fn magnitude(g: &[f64; 2]) -> f64 {
    (g[0] * g[0] + g[1] * g[1]).sqrt()
}

impl DiscreteField {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.u[self.grid.node(i, j)]
    }

    /// Largest `|∇u|` over cells whose center satisfies `|x₁| ≤ r`.
    pub fn grad_max(&self, r: f64) -> Result<f64> {
        let g = &self.grid;
        let mut best: Option<f64> = None;
        for i in 0..g.n1 {
            if g.centers[i].y1.abs() > r {
                continue;
            }
            for j in 0..g.n2 {
                let m = magnitude(&self.grad_phys[g.cell(i, j)]);
                best = Some(best.map_or(m, |b: f64| b.max(m)));
            }
        }
        best.ok_or_else(|| Error::Domain(format!("no cell center with |x₁| ≤ {r}")))
    }

    /// Minimum and maximum of `u` over `lo ≤ x₁ ≤ hi`, using grid nodes
    /// inside the interval and linear interpolation along `y₁` at its ends.
    fn extrema_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let g = &self.grid;
        let lo = lo.max(-g.half_length);
        let hi = hi.min(g.half_length);
        if lo > hi {
            return None;
        }
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        let first = g.y1.partition_point(|&y| y < lo);
        let last = g.y1.partition_point(|&y| y <= hi);
        for j in 0..=g.n2 {
            for i in first..last {
                let v = self.value(i, j);
                mn = mn.min(v);
                mx = mx.max(v);
            }
            for x in [lo, hi] {
                let v = self.interpolate_line(x, j);
                mn = mn.min(v);
                mx = mx.max(v);
            }
        }
        Some((mn, mx))
    }

    /// Linear interpolation of `u` along the grid line `y₂ = y₂[j]`.
    fn interpolate_line(&self, x1: f64, j: usize) -> f64 {
        let g = &self.grid;
        let i = g.y1.partition_point(|&y| y <= x1).clamp(1, g.n1) - 1;
        let t = ((x1 - g.y1[i]) / (g.y1[i + 1] - g.y1[i])).clamp(0.0, 1.0);
        (1.0 - t) * self.value(i, j) + t * self.value(i + 1, j)
    }

    /// `max − min` of `u` over the slab `|x₁ − c| < ρ`, clipped to the neck.
    pub fn oscillation(&self, center: f64, rho: f64) -> Result<f64> {
        let l = self.grid.half_length;
        if !(rho > 0.0) || center.abs() > l {
            return Err(Error::Domain(format!(
                "slab |x₁ − {center}| < {rho} does not meet the neck [−{l}, {l}]"
            )));
        }
        let (mn, mx) = self
            .extrema_on(center - rho, center + rho)
            .ok_or_else(|| Error::Domain("empty slab".into()))?;
        Ok(mx - mn)
    }

    /// Oscillation of `u` over the whole neck.
    pub fn total_oscillation(&self) -> f64 {
        let (mn, mx) = self
            .u
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        mx - mn
    }

    /// `w = sup_{Ω_{2r}} u − u`; returns `sup w / inf w` over
    /// `Ω_r ∖ Ω_{r/2}`.
    pub fn harnack_ratio(&self, r: f64) -> Result<HarnackMeasurement> {
        let l = self.grid.half_length;
        if !(r > 0.0) || 2.0 * r > l {
            return Err(Error::Domain(format!(
                "Harnack radius {r}: Ω_{{2r}} must lie inside the neck of half-length {l}"
            )));
        }
        let (_, sup2) = self.extrema_on(-2.0 * r, 2.0 * r).expect("non-empty");
        let (a_min, a_max) = self.extrema_on(0.5 * r, r).expect("non-empty");
        let (b_min, b_max) = self.extrema_on(-r, -0.5 * r).expect("non-empty");
        let sup_w = sup2 - a_min.min(b_min);
        let inf_w = sup2 - a_max.max(b_max);
        let osc = self.total_oscillation();
        if !(sup_w > 1e-12 * osc) || !(inf_w > 0.0) {
            return Ok(HarnackMeasurement {
                radius: r,
                ratio: 1.0,
                sup_w,
                inf_w,
                degenerate: true,
            });
        }
        Ok(HarnackMeasurement {
            radius: r,
            ratio: sup_w / inf_w,
            sup_w,
            inf_w,
            degenerate: false,
        })
    }

    /// Net conormal flux through `x₁ = −L` and `x₁ = +L`, from the Dirichlet
    /// reactions. Returns `(left, right)`; conservation means `left + right ≈ 0`.
    pub fn lateral_fluxes(&self) -> (f64, f64) {
        let g = &self.grid;
        let fallback;
        let split = if self.split.matches(g) {
            &self.split
        } else {
            fallback = ColumnSplit::from_values(g, &self.u);
            &fallback
        };
        let asm = assemble(g, split, self.p, self.sigma, None);
        // The column-function rows carry the summed nodal reactions.
        let left = asm.residual[g.node(0, 0)];
        let right = asm.residual[g.node(g.n1, 0)];
        (left, right)
    }

    /// `|left + right| / max(|left|, |right|)`.
    pub fn flux_defect(&self) -> f64 {
        let (l, r) = self.lateral_fluxes();
        (l + r).abs() / l.abs().max(r.abs())
    }

    /// `max |u(y₁, y₂) + u(−y₁, y₂)|` over mirrored node pairs.
    pub fn odd_symmetry_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst = 0.0_f64;
        for i in 0..=g.n1 {
            for j in 0..=g.n2 {
                worst = worst.max((self.value(i, j) + self.value(g.n1 - i, j)).abs());
            }
        }
        worst
    }

    /// Coefficients `a_ij = δ_ij + (p−2)(ς+|∇u|²)^{−1}∂_iu∂_ju` of the
    /// normalized equation at a cell center.
    pub fn normalized_coefficients(&self, cell: usize) -> [[f64; 2]; 2] {
        let g = self.grad_phys[cell];
        let t = self.sigma + g[0] * g[0] + g[1] * g[1];
        let c = (self.p - 2.0) / t;
        [
            [1.0 + c * g[0] * g[0], c * g[0] * g[1]],
            [c * g[1] * g[0], 1.0 + c * g[1] * g[1]],
        ]
    }

    /// Maximum error against the manufactured solution at the nodes.
    pub fn manufactured_error(&self) -> Result<f64> {
        let BoundaryMode::Manufactured { center } = self.boundary else {
            return Err(Error::Precondition("field was not solved in manufactured mode".into()));
        };
        let g = &self.grid;
        let mut worst = 0.0_f64;
        for i in 0..=g.n1 {
            for j in 0..=g.n2 {
                let e = radial_p_harmonic(self.p, center, g.node_x(i, j));
                worst = worst.max((self.value(i, j) - e).abs());
            }
        }
        Ok(worst)
    }

    /// Nodal gradient: mean of the adjacent cell gradients.
    fn nodal_gradient(&self, i: usize, j: usize) -> [f64; 2] {
        let g = &self.grid;
        let mut acc = [0.0; 2];
        let mut n = 0.0;
        for ci in [i.wrapping_sub(1), i] {
            for cj in [j.wrapping_sub(1), j] {
                if ci < g.n1 && cj < g.n2 {
                    let v = self.grad_phys[g.cell(ci, cj)];
                    acc[0] += v[0];
                    acc[1] += v[1];
                    n += 1.0;
                }
            }
        }
        [acc[0] / n, acc[1] / n]
    }

    /// CSV with columns `y1,y2,x1,x2,u,gx,gy`, one row per node.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y1,y2,x1,x2,u,gx,gy")?;
        let g = &self.grid;
        for i in 0..=g.n1 {
            for j in 0..=g.n2 {
                let x = g.node_x(i, j);
                let gr = self.nodal_gradient(i, j);
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    g.y1[i],
                    g.y2[j],
                    x[0],
                    x[1],
                    self.value(i, j),
                    gr[0],
                    gr[1]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnackMeasurement {
    pub radius: f64,
    pub ratio: f64,
    pub sup_w: f64,
    pub inf_w: f64,
    /// `sup w` vanished relative to the oscillation of `u`; `ratio` is 1.
    pub degenerate: bool,
}

/// Height of a wall at `x₁`, for callers outside the flattened frame.
pub fn wall_height(geometry: &GapGeometry, side: Inclusion, x1: f64) -> Result<f64> {
    geometry.boundary_height(side, &[x1])
}
