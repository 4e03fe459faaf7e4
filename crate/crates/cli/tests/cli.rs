use std::path::{Path, PathBuf};
use std::process::Output;

use serde_json::{json, Value};
use tempfile::TempDir;

fn geometry(eps: f64, profile: Value) -> Value {
    json!({
        "d": 2, "m": 4.0, "eps": eps, "profile": profile,
        "kappa": {"kappa1": 0.45, "kappa2": 0.9, "kappa3": 3.6, "kappa4": 120.0},
        "R0": 0.475
    })
}

fn square() -> Value {
    json!({"kind": "curvilinear_square", "r_tilde0": 1.0})
}

fn write_config(dir: &TempDir, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn neckgap(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_neckgap"))
        .args(args)
        .output()
        .unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    neckgap(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn sweep_config(eps: &[f64], profile: Value) -> Value {
    json!({
        "version": 1,
        "geometry": geometry(1e-2, profile),
        "solver": {"p": 2.0, "n1": 64, "n2": 8},
        "sweep": {"eps": eps},
        "seed": 3
    })
}

const EPS4: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[test]
fn check_geometry_passes_for_curvilinear_squares() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.json", &json!({"version": 1, "geometry": geometry(1e-3, square())}));
    let out = dir.path().join("out");
    let o = run("check-geometry", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let g = read_json(&out.join("geometry.json"));
    assert_eq!(g["admissibility"]["pass"], true);
    assert!(g["constants"]["c_tilde0"].as_f64().unwrap() > 0.0);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["outputs"][0]["path"], "geometry.json");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn flat_profile_fails_the_gap_hypothesis() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.json", &json!({"version": 1, "geometry": geometry(1e-3, json!({"kind": "flat"}))}));
    let out = dir.path().join("out");
    let o = run("check-geometry", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let g = read_json(&out.join("geometry.json"));
    assert_eq!(g["admissibility"]["pass"], false);
    assert!(g["failed_hypotheses"].as_array().unwrap().contains(&json!("H1")));
}

#[test]
fn malformed_config_names_the_bad_key() {
    let dir = TempDir::new().unwrap();
    let mut g = geometry(1e-3, square());
    g["kappa"]["kappa9"] = json!(1.0);
    let cfg = write_config(&dir, "g.json", &json!({"version": 1, "geometry": g}));
    let o = run("check-geometry", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("geometry.kappa"), "{err}");
    assert!(err.contains("kappa9"), "{err}");

    let cfg = write_config(&dir, "v.json", &json!({"version": 7, "geometry": geometry(1e-3, square())}));
    let o = run("check-geometry", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`version`"));

    let mut bad = json!({"version": 1, "geometry": geometry(1e-3, square())});
    bad["geometry"]["eps"] = json!(-1.0);
    let cfg = write_config(&dir, "e.json", &bad);
    let o = run("check-geometry", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`geometry`"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(neckgap(&["sweep"]).status.code(), Some(1));
    assert_eq!(neckgap(&["nonsense"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.json", &sweep_config(&EPS4, square()));
    // Neither --out nor output_dir.
    let o = neckgap(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run("sweep", &cfg, &dir.path().join("out"), &["--jobs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run("weighted", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`weighted`"));
}

#[test]
fn sweep_with_two_points_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.json", &sweep_config(&[1e-2, 1e-3], square()));
    let o = run("sweep", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 4"));
}

#[test]
fn sweep_writes_fit_against_the_convexity_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.json", &sweep_config(&EPS4, square()));
    let out = dir.path().join("out");
    let o = run("sweep", &cfg, &out, &["--dump-field"]);
    let fit = read_json(&out.join("fit.json"));
    assert_eq!(fit["theory_rate"], 0.25);
    assert_eq!(fit["regime"], "convexity_dominated");
    assert_eq!(fit["comparison"], "compared");
    let gap = fit["abs_gap"].as_f64().unwrap();
    let expected = if gap <= 0.08 { 0 } else { 3 };
    assert_eq!(o.status.code(), Some(expected), "{}", String::from_utf8_lossy(&o.stdout));

    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps,gmax,harnack_ratio,thm1_ratio,osc_center,converged,outer_iters"
    );
    let gmax: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(gmax.len(), 4);
    assert!(gmax.windows(2).all(|w| w[1] > w[0]));

    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("log10_eps,log10_gmax\n"));
    assert_eq!(plot.lines().count(), 5);
    assert!(out.join("fields/field_03.csv").exists());
    let trace = read_json(&out.join("fields/trace_00.json"));
    assert!(trace["outer_iterations"].as_u64().unwrap() >= 1);
}

#[test]
fn flat_sweep_skips_the_comparison() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.json", &sweep_config(&EPS4, json!({"kind": "flat"})));
    let out = dir.path().join("out");
    let o = run("sweep", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let fit = read_json(&out.join("fit.json"));
    assert!(fit["fitted_exponent"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(fit["comparison"], "skipped");
    assert!(fit["note"].as_str().unwrap().contains("flat"));
}

#[test]
fn tight_rate_tolerance_is_a_threshold_breach() {
    let dir = TempDir::new().unwrap();
    let mut c = sweep_config(&EPS4, square());
    c["sweep"]["tolerance"] = json!(1e-9);
    let cfg = write_config(&dir, "s.json", &c);
    let o = run("sweep", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

fn numeric_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn identical_configs_reproduce_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let mut c = sweep_config(&EPS4, square());
    c["solver"]["p"] = json!(3.0);
    let cfg = write_config(&dir, "s.json", &c);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("sweep", &cfg, &a, &["--jobs", "1", "--dump-field"]);
    run("sweep", &cfg, &b, &["--jobs", "4", "--dump-field"]);
    let (fa, fb) = (numeric_outputs(&a), numeric_outputs(&b));
    assert!(fa.len() >= 11);
    assert_eq!(fa, fb);
    let (ma, mb) = (read_json(&a.join("manifest.json")), read_json(&b.join("manifest.json")));
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
}

#[test]
fn solve_reports_measurements_and_dumps_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "version": 1,
        "geometry": geometry(1e-3, square()),
        "solver": {"p": 1.5, "n1": 64, "n2": 8}
    });
    let cfg = write_config(&dir, "s.json", &cfg);
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &["--dump-field"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("solve.json"));
    assert_eq!(s["converged"], true);
    assert!(s["flux_defect"].as_f64().unwrap() < 1e-8);
    assert!(s["odd_symmetry_defect"].as_f64().unwrap() < 1e-8);
    assert!(s["trace"]["step_kinds"].as_array().unwrap().iter().all(|k| k == "kacanov" || k == "newton"));
    let field = std::fs::read_to_string(out.join("field.csv")).unwrap();
    assert!(field.starts_with("y1,y2,x1,x2,u,gx,gy\n"));
    assert_eq!(field.lines().count(), 1 + 65 * 9);
}

#[test]
fn solver_non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "version": 1,
        "geometry": geometry(1e-3, square()),
        "solver": {"p": 4.0, "n1": 32, "n2": 8, "max_outer": 1, "tol_nonlinear": 1e-12}
    });
    let cfg = write_config(&dir, "s.json", &cfg);
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["tasks"][0]["status"], "failed");
    assert!(m["tasks"][0]["detail"].as_str().unwrap().contains("did not converge"));
}

fn barrier_config(sup: bool, sub: bool) -> Value {
    let mut g = geometry(1e-4, square());
    g["R0"] = json!(0.25);
    let mut b = json!({"grid": {"n_radial": 100, "n_height": 40}, "derivative_points": 200});
    if sup {
        b["supersolution"] = json!({"p": 7.0, "tau": 0.5, "gamma": 1.0 / 6.0});
    }
    if sub {
        b["subsolution"] = json!({"p": 2.0, "tau": 0.5, "gamma": 0.5});
    }
    json!({"version": 1, "geometry": g, "barrier": b, "seed": 11})
}

#[test]
fn supersolution_verifies_and_subsolution_flux_breaches() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sup");
    let o = run("verify-barriers", &write_config(&dir, "a.json", &barrier_config(true, false)), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v = read_json(&out.join("barrier_supersolution.json"));
    assert_eq!(v["verdict"]["n_violations"], 0);
    assert!(v["derivatives"]["max_grad_error"].as_f64().unwrap() < 1e-6);

    let out = dir.path().join("sub");
    let o = run("verify-barriers", &write_config(&dir, "b.json", &barrier_config(false, true)), &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let v = read_json(&out.join("barrier_subsolution.json"));
    assert!(v["verdict"]["n_violations"].as_u64().unwrap() > 0);
    for viol in v["verdict"]["violations"].as_array().unwrap() {
        let q = viol["quantity"].as_str().unwrap();
        assert!(q.starts_with("flux"), "{q}");
    }

    let mut bad = barrier_config(true, false);
    bad["barrier"]["supersolution"]["gamma"] = json!(0.5);
    let o = run("verify-barriers", &write_config(&dir, "c.json", &bad), &dir.path().join("bad"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("barrier.supersolution"));
}

fn weighted_config(weight: Value, boundary: Value) -> Value {
    json!({
        "version": 1,
        "weighted": {
            "weight": {"series": weight, "kappa": 2.0, "sup_bound": 1.0},
            "boundary": boundary,
            "eigen_n": 128,
            "disk": {"n_r": 120, "n_theta": 32}
        }
    })
}

#[test]
fn weighted_outputs_eigenvalue_and_decay() {
    let dir = TempDir::new().unwrap();
    let cfg = weighted_config(
        json!({"a0": 1.0, "cos": [0.0, 0.5], "sin": []}),
        json!({"a0": 0.0, "cos": [1.0], "sin": []}),
    );
    let out = dir.path().join("w");
    let o = run("weighted", &write_config(&dir, "w.json", &cfg), &out, &["--dump-field"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let w = read_json(&out.join("weighted.json"));
    let lambda1 = w["lambda1"].as_f64().unwrap();
    assert!(lambda1 <= 1.0);
    let (a, ae) = (w["alpha"].as_f64().unwrap(), w["alpha_emp"].as_f64().unwrap());
    assert!((ae - a).abs() <= 0.1 * a);
    assert!(w["weight_descriptor"]["report"]["min_a"].as_f64().unwrap() > 0.0);
    let decay = std::fs::read_to_string(out.join("decay.csv")).unwrap();
    assert!(decay.starts_with("r,sup_osc\n"));
    assert!(out.join("weighted_field.csv").exists());

    // Constant data: v ≡ 1, no decay to fit.
    let cfg = weighted_config(json!({"a0": 1.0, "cos": [], "sin": []}), json!({"a0": 1.0, "cos": [], "sin": []}));
    let out = dir.path().join("c");
    let o = run("weighted", &write_config(&dir, "c.json", &cfg), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let w = read_json(&out.join("weighted.json"));
    assert!(w["alpha_emp"].is_null());
    assert!(w["note"].is_string());
    assert!((w["lambda1"].as_f64().unwrap() - 1.0).abs() < 1e-4);

    // A weight with a cos θ mode breaks the orthogonality condition.
    let cfg = weighted_config(json!({"a0": 1.0, "cos": [0.3], "sin": []}), json!({"a0": 0.0, "cos": [1.0], "sin": []}));
    let o = run("weighted", &write_config(&dir, "b.json", &cfg), &dir.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weighted.weight"));
}
