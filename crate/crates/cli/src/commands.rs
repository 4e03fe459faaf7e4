use std::path::PathBuf;

use neckgap_core::barriers::{check_derivatives, verify_subsolution, verify_supersolution, BarrierSpec, BarrierVerdict, DerivativeCheck};
use neckgap_core::geometry::{AdmissibilityReport, GapGeometry, GeometryConstants, ProfileSpec};
use neckgap_core::rates::{run_sweep, run_sweep_with_fields, theory_exponents, thm1_ratio, RateFit, Regime, SweepResult, TheoryRates, Thm1Diagnostic};
use neckgap_core::solver::{build_grid, solve, BoundaryMode, DiscreteField, HarnackMeasurement, IterationTrace};
use neckgap_core::weighted::{check_weight, solve_weighted_disk, sphere_lambda1, DiskGrid, FourierSeries, WeightReport, WeightFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{ExitStatus, HarnessError};
use crate::manifest::{RunManifest, TaskRecord, TaskStatus};
use crate::output::{fmt_f64, sha256_hex, OutputSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckGeometry,
    VerifyBarriers,
    Solve,
    Sweep,
    Weighted,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckGeometry => "check-geometry",
            Command::VerifyBarriers => "verify-barriers",
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Overrides the config's `output_dir`.
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub dump_field: bool,
}

/// Result of a command that got far enough to have an output directory.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub error: Option<HarnessError>,
}

/// Runs one command end to end. Errors before the output directory is known
/// are returned directly; later ones are recorded in the manifest.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    if opts.jobs == Some(0) {
        return Err(HarnessError::Usage("--jobs must be at least 1".into()));
    }
    let (cfg, raw) = ExperimentConfig::load(&opts.config)?;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| HarnessError::Usage("no output directory: pass --out or set output_dir".into()))?;
    let mut manifest = RunManifest::start(
        cmd.name(),
        &opts.config.display().to_string(),
        sha256_hex(&raw),
        cfg.seed,
        opts.jobs,
    );
    let mut sink = OutputSink::create(&out_dir)?;
    let result = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Usage(format!("cannot build a pool of {n} threads: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cmd, &cfg, opts.dump_field, &mut sink))),
        None => dispatch(cmd, &cfg, opts.dump_field, &mut sink),
    };
    let (status, error) = match result {
        Ok(tasks) => {
            let breach = tasks.iter().any(|t| t.status == TaskStatus::Breach);
            manifest.tasks = tasks;
            (if breach { ExitStatus::Breach } else { ExitStatus::Success }, None)
        }
        Err(e) => {
            manifest.tasks.push(TaskRecord::new(cmd.name(), TaskStatus::Failed, e.to_string()));
            (e.exit_status(), Some(e))
        }
    };
    manifest.finish(status.code(), sink.records());
    let bytes = crate::output::to_json(&manifest);
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, bytes).map_err(|source| HarnessError::Io { path, source })?;
    Ok(RunOutcome {
        status,
        out_dir,
        manifest,
        error,
    })
}

fn dispatch(cmd: Command, cfg: &ExperimentConfig, dump: bool, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    match cmd {
        Command::CheckGeometry => cmd_check_geometry(cfg, sink),
        Command::VerifyBarriers => cmd_verify_barriers(cfg, sink),
        Command::Solve => cmd_solve(cfg, dump, sink),
        Command::Sweep => cmd_sweep(cfg, dump, sink),
        Command::Weighted => cmd_weighted(cfg, dump, sink),
    }
}

#[derive(Serialize)]
struct GeometryOutput<'a> {
    geometry: &'a GapGeometry,
    admissibility: &'a AdmissibilityReport,
    failed_hypotheses: Vec<&'static str>,
    constants: Option<GeometryConstants>,
    constants_error: Option<String>,
}

pub fn cmd_check_geometry(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    let g = cfg.geometry()?;
    let block = cfg.geometry.as_ref().expect("validated above");
    if block.samples < 2 {
        return Err(HarnessError::Config {
            path: "geometry.samples".into(),
            message: "needs at least 2 radial samples".into(),
        });
    }
    let report = g.check_admissibility(block.samples)?;
    let c = block.constants;
    let (constants, constants_error) = match g.compute_constants(c.p, c.beta, c.mu0) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut failed = Vec::new();
    if report.h1_check.iter().any(|m| m.lower < 0.0 || m.upper < 0.0) {
        failed.push("H1");
    }
    if report
        .h2_check
        .iter()
        .any(|m| m.upper_inclusion < 0.0 || m.lower_inclusion < 0.0)
    {
        failed.push("H2");
    }
    if report.h3_margin < 0.0 {
        failed.push("H3");
    }
    let status = if report.pass { TaskStatus::Pass } else { TaskStatus::Breach };
    let detail = if report.pass {
        "convexity hypotheses hold on the sampled ball".to_string()
    } else {
        format!("violated: {}", failed.join(", "))
    };
    sink.write_json(
        "geometry.json",
        &GeometryOutput {
            geometry: &g,
            admissibility: &report,
            failed_hypotheses: failed,
            constants,
            constants_error,
        },
    )?;
    Ok(vec![TaskRecord::new("admissibility", status, detail)])
}

#[derive(Serialize)]
struct BarrierOutput<'a> {
    verdict: &'a BarrierVerdict,
    derivatives: DerivativeCheck,
    derivative_tolerance: f64,
    pass: bool,
}

/// Random points in the verified annulus, `|x_d| ≤ ε/2 + |x'|^m`.
fn derivative_points(rng: &mut ChaCha8Rng, spec: &BarrierSpec, eps: f64, r_lo: f64, r_hi: f64, n: usize) -> Vec<[f64; 3]> {
    let (a, b) = (r_lo.ln(), r_hi.ln());
    (0..n)
        .map(|_| {
            let r = rng.gen_range(a..=b).exp();
            let z = rng.gen_range(-1.0..=1.0) * (0.5 * eps + r.powf(spec.m()));
            if spec.d() == 2 {
                [r, z, 0.0]
            } else {
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                [r * phi.cos(), r * phi.sin(), z]
            }
        })
        .collect()
}

pub fn cmd_verify_barriers(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    let (sup, sub) = cfg.barrier_specs()?;
    let block = cfg.barrier.as_ref().expect("validated above");
    let g = cfg.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::new();
    for (spec, name) in [(sup, "supersolution"), (sub, "subsolution")] {
        let Some(spec) = spec else { continue };
        let verdict = if name == "supersolution" {
            verify_supersolution(&spec, &g, block.grid)?
        } else {
            verify_subsolution(&spec, &g, block.grid)?
        };
        let (lo, hi) = (verdict.region.r_inner, verdict.region.r_outer);
        let pts = if hi > lo && lo > 0.0 {
            derivative_points(&mut rng, &spec, g.eps(), lo, hi, block.derivative_points)
        } else {
            Vec::new()
        };
        let derivatives = check_derivatives(&spec, &pts)?;
        let tol = block.derivative_tolerance;
        let deriv_ok = derivatives.max_grad_error <= tol && derivatives.max_hess_error <= tol;
        let pass = verdict.pass && deriv_ok;
        let detail = format!(
            "{} samples, {} violations, min margin {:.3e}, r̂ {:.3e}; derivative errors {:.1e} / {:.1e}",
            verdict.n_samples,
            verdict.n_violations,
            verdict.min_margin,
            verdict.empirical_r_hat,
            derivatives.max_grad_error,
            derivatives.max_hess_error
        );
        sink.write_json(
            &format!("barrier_{name}.json"),
            &BarrierOutput {
                verdict: &verdict,
                derivatives,
                derivative_tolerance: tol,
                pass,
            },
        )?;
        let status = if pass { TaskStatus::Pass } else { TaskStatus::Breach };
        tasks.push(TaskRecord::new(name, status, detail));
    }
    Ok(tasks)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    eps: f64,
    m: f64,
    p: f64,
    sigma: f64,
    half_length: f64,
    n1: usize,
    n2: usize,
    boundary: BoundaryMode,
    converged: bool,
    final_residual: f64,
    gmax_neck: f64,
    total_oscillation: f64,
    lateral_fluxes: (f64, f64),
    flux_defect: f64,
    odd_symmetry_defect: f64,
    harnack: Option<HarnackMeasurement>,
    thm1: Option<Thm1Diagnostic>,
    manufactured_error: Option<f64>,
    residual_history: &'a [f64],
    trace: &'a IterationTrace,
}

fn field_csv(field: &DiscreteField) -> Vec<u8> {
    let mut buf = Vec::new();
    field.write_csv(&mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn cmd_solve(cfg: &ExperimentConfig, dump: bool, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    let g = cfg.geometry()?;
    let solver = cfg.solver()?;
    let half_length = cfg.half_length()?;
    let grid = build_grid(&g, &solver, half_length).map_err(|e| HarnessError::Config {
        path: "geometry.half_length".into(),
        message: e.to_string(),
    })?;
    let field = solve(&grid, &solver)?;
    let lateral = matches!(field.boundary, BoundaryMode::Lateral);
    let out = SolveOutput {
        eps: g.eps(),
        m: g.m(),
        p: solver.p,
        sigma: field.sigma,
        half_length,
        n1: grid.n1,
        n2: grid.n2,
        boundary: field.boundary,
        converged: field.converged,
        final_residual: *field.residual_history.last().unwrap_or(&f64::NAN),
        gmax_neck: field.grad_max(half_length)?,
        total_oscillation: field.total_oscillation(),
        lateral_fluxes: field.lateral_fluxes(),
        flux_defect: field.flux_defect(),
        odd_symmetry_defect: field.odd_symmetry_defect(),
        harnack: lateral
            .then(|| field.harnack_ratio(g.eps().powf(1.0 / g.m())).ok())
            .flatten(),
        thm1: lateral.then(|| thm1_ratio(&field).ok()).flatten(),
        manufactured_error: (!lateral).then(|| field.manufactured_error().ok()).flatten(),
        residual_history: &field.residual_history,
        trace: &field.trace,
    };
    let detail = format!(
        "{} outer iterations, residual {:.2e}, max |∇u| {:.6e}",
        field.trace.outer_iterations, out.final_residual, out.gmax_neck
    );
    sink.write_json("solve.json", &out)?;
    if dump {
        sink.write_bytes("field.csv", &field_csv(&field))?;
    }
    Ok(vec![TaskRecord::new("solve", TaskStatus::Done, detail)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Compared,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub fitted_exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub failures: usize,
    pub theory_rate: f64,
    pub regime: Regime,
    pub theory: TheoryRates,
    pub abs_gap: f64,
    pub tolerance: f64,
    pub min_r_squared: Option<f64>,
    pub comparison: Comparison,
    pub note: Option<String>,
    pub pass: bool,
}

fn sweep_rows(result: &SweepResult) -> Vec<Vec<String>> {
    result
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.eps),
                fmt_f64(p.gmax),
                fmt_f64(p.harnack_ratio),
                fmt_f64(p.thm1_ratio),
                fmt_f64(p.osc_center),
                p.converged.to_string(),
                p.outer_iters.to_string(),
            ]
        })
        .collect()
}

pub fn evaluate_fit(fit: &RateFit, result: &SweepResult, theory: TheoryRates, profile: ProfileSpec, tolerance: f64, min_r2: Option<f64>) -> FitOutput {
    let abs_gap = (fit.fitted_exponent - theory.rate_2d).abs();
    let (comparison, note, pass) = if matches!(profile, ProfileSpec::Flat) {
        (
            Comparison::Skipped,
            Some("flat profile: no convexity, no blow-up to compare".to_string()),
            true,
        )
    } else {
        let r2_ok = min_r2.map_or(true, |r| fit.r_squared >= r);
        (Comparison::Compared, None, abs_gap <= tolerance && r2_ok)
    };
    FitOutput {
        fitted_exponent: fit.fitted_exponent,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n_points: fit.eps.len(),
        failures: result.failures,
        theory_rate: theory.rate_2d,
        regime: theory.regime,
        theory,
        abs_gap,
        tolerance,
        min_r_squared: min_r2,
        comparison,
        note,
        pass,
    }
}

pub fn cmd_sweep(cfg: &ExperimentConfig, dump: bool, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    let plan = cfg.sweep_plan()?;
    let block = cfg.sweep.as_ref().expect("validated above");
    let theory = theory_exponents(2, plan.geometry.m(), plan.solver.p, plan.tau)?;
    let (result, fields) = if dump {
        run_sweep_with_fields(&plan)?
    } else {
        (run_sweep(&plan)?, Vec::new())
    };
    let fit = result.fit()?;
    let out = evaluate_fit(&fit, &result, theory, plan.geometry.profile(), block.tolerance, block.min_r_squared);

    sink.write_csv(
        "sweep.csv",
        &["eps", "gmax", "harnack_ratio", "thm1_ratio", "osc_center", "converged", "outer_iters"],
        &sweep_rows(&result),
    )?;
    sink.write_json("fit.json", &out)?;
    let plot: Vec<Vec<String>> = result
        .converged()
        .map(|p| vec![fmt_f64(p.eps.log10()), fmt_f64(p.gmax.log10())])
        .collect();
    sink.write_csv("plot.csv", &["log10_eps", "log10_gmax"], &plot)?;
    for (k, f) in fields.iter().enumerate() {
        if let Some(f) = f {
            sink.write_bytes(&format!("fields/field_{k:02}.csv"), &field_csv(f))?;
            sink.write_json(&format!("fields/trace_{k:02}.json"), &f.trace)?;
        }
    }

    let mut tasks: Vec<TaskRecord> = result
        .points
        .iter()
        .map(|p| match &p.error {
            None => TaskRecord::new(
                format!("solve eps={}", fmt_f64(p.eps)),
                TaskStatus::Done,
                format!("{} outer iterations, gmax {:.6e}", p.outer_iters, p.gmax),
            ),
            Some(e) => TaskRecord::new(format!("solve eps={}", fmt_f64(p.eps)), TaskStatus::Failed, e.clone()),
        })
        .collect();
    let detail = match out.comparison {
        Comparison::Compared => format!(
            "fitted {:.4} vs theory {:.4} (gap {:.4}, tolerance {}), r² {:.5}",
            out.fitted_exponent, out.theory_rate, out.abs_gap, out.tolerance, out.r_squared
        ),
        Comparison::Skipped => format!(
            "fitted {:.4}; comparison skipped: {}",
            out.fitted_exponent,
            out.note.as_deref().unwrap_or_default()
        ),
    };
    let status = if out.pass { TaskStatus::Pass } else { TaskStatus::Breach };
    tasks.push(TaskRecord::new("rate fit", status, detail));
    Ok(tasks)
}

#[derive(Serialize)]
struct WeightDescriptor<'a> {
    series: &'a FourierSeries,
    kappa: f64,
    sup_bound: f64,
    report: WeightReport,
}

#[derive(Serialize)]
struct WeightedGrid {
    eigen_n: usize,
    disk: DiskGrid,
}

#[derive(Serialize)]
struct WeightedOutput<'a> {
    lambda1: f64,
    alpha: f64,
    alpha_emp: Option<f64>,
    weight_descriptor: WeightDescriptor<'a>,
    grid: WeightedGrid,
    lambda0: f64,
    lambda2: f64,
    boundary: &'a FourierSeries,
    fit_r_squared: Option<f64>,
    relative_gap: Option<f64>,
    tolerance: f64,
    v_origin: f64,
    max_abs: f64,
    linear_relative_residual: f64,
    note: Option<&'static str>,
    pass: bool,
}

pub fn cmd_weighted(cfg: &ExperimentConfig, dump: bool, sink: &mut OutputSink) -> Result<Vec<TaskRecord>, HarnessError> {
    let block = cfg.weighted_block()?;
    let w: &WeightFunction = &block.weight;
    let report = check_weight(w, block.quad_n).map_err(|e| HarnessError::Config {
        path: "weighted.weight".into(),
        message: e.to_string(),
    })?;
    let eig = sphere_lambda1(w, block.d, block.eigen_n)?;
    let disk = solve_weighted_disk(w, &block.boundary, block.disk)?;
    let relative_gap = disk.alpha_emp.map(|a| (a - eig.alpha).abs() / eig.alpha);
    let pass = relative_gap.map_or(true, |r| r <= block.tolerance);
    let note = relative_gap
        .is_none()
        .then_some("no oscillation in the fit window: decay exponent undefined");
    let out = WeightedOutput {
        lambda1: eig.lambda1,
        alpha: eig.alpha,
        alpha_emp: disk.alpha_emp,
        weight_descriptor: WeightDescriptor {
            series: &w.series,
            kappa: w.kappa,
            sup_bound: w.sup_bound,
            report,
        },
        grid: WeightedGrid {
            eigen_n: block.eigen_n,
            disk: block.disk,
        },
        lambda0: eig.lambda0,
        lambda2: eig.lambda2,
        boundary: &block.boundary,
        fit_r_squared: disk.fit_r_squared,
        relative_gap,
        tolerance: block.tolerance,
        v_origin: disk.v_origin,
        max_abs: disk.max_abs,
        linear_relative_residual: disk.linear_relative_residual,
        note,
        pass,
    };
    sink.write_json("weighted.json", &out)?;
    let rows: Vec<Vec<String>> = disk
        .decay
        .iter()
        .map(|s| vec![fmt_f64(s.r), fmt_f64(s.sup_osc)])
        .collect();
    sink.write_csv("decay.csv", &["r", "sup_osc"], &rows)?;
    if dump {
        let nt = disk.grid.n_theta;
        let rows: Vec<Vec<String>> = disk
            .v
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let theta = std::f64::consts::TAU * (idx % nt) as f64 / nt as f64;
                vec![fmt_f64(disk.radii[idx / nt]), fmt_f64(theta), fmt_f64(*v)]
            })
            .collect();
        sink.write_csv("weighted_field.csv", &["r", "theta", "v"], &rows)?;
    }
    let detail = match (disk.alpha_emp, relative_gap) {
        (Some(a), Some(r)) => format!(
            "λ₁ {:.10}, α {:.6}, fitted decay {:.6} (relative gap {:.3})",
            eig.lambda1, eig.alpha, a, r
        ),
        _ => format!("λ₁ {:.10}, α {:.6}; decay exponent undefined", eig.lambda1, eig.alpha),
    };
    let status = match relative_gap {
        None => TaskStatus::Done,
        Some(_) if pass => TaskStatus::Pass,
        Some(_) => TaskStatus::Breach,
    };
    Ok(vec![TaskRecord::new("weighted", status, detail)])
}
