//! Experiment pipelines. Each runner validates what it can before computing,
//! writes its artifacts and a `summary.json`, and reports a verdict.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use plap_core::calculus::{lq_norm, w2q_norm};
use plap_core::continuation::{run_continuation, ContinuationSettings};
use plap_core::grid::{enforce_dirichlet, field_from_fn, read_field_dump, Grid};
use plap_core::inequality_lab::{
    check_appendix, check_mu_bounds, check_tensor_lipschitz, check_young_type, sweeps_to_csv,
};
use plap_core::linear_elliptic::{estimate_constants, ConstantsReport};
use plap_core::nonlinear_solver::{solve_fixed_point, verify_apriori, SolverConfig, SolverConstants};
use plap_core::oracle_minimizer::{manufactured_problem, minimize, weak_residual, ExactSolution, SineBubble};
use plap_core::VectorField;

use crate::config::{DataSpec, Experiment, ExperimentConfig};
use crate::failure::Failure;
use crate::output::{Artifacts, Manifest, Status, MANIFEST, SUMMARY};

/// `Ok(())` when every solver converged and every check passed.
type Verdict = Result<(), String>;

/// Runs `experiment`, writes its artifacts and manifest under `cfg.out`.
///
/// A failed verdict still writes everything and returns
/// [`Failure::Numerical`]; configuration problems return before the
/// manifest is written.
pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> Result<Manifest, Failure> {
    validate(experiment, cfg)?;
    let mut art = Artifacts::create(&cfg.out)?;
    let verdict = match experiment {
        Experiment::Solve => solve(cfg, &mut art)?,
        Experiment::Oracle => oracle(cfg, &mut art)?,
        Experiment::Constants => constants(cfg, &mut art)?,
        Experiment::Inequalities => inequalities(cfg, &mut art)?,
        Experiment::Continuation => continuation(cfg, &mut art)?,
        Experiment::Mms => mms(cfg, &mut art)?,
        Experiment::Report => report(cfg, &mut art)?,
    };
    let manifest = art.finish(experiment, cfg, verdict.clone())?;
    match verdict {
        Ok(()) => Ok(manifest),
        Err(m) => Err(Failure::Numerical(m)),
    }
}

/// Checks that need no numerics: ranges, grid shapes, list lengths.
pub fn validate(experiment: Experiment, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let n = cfg.grid.n_dims;
    match experiment {
        Experiment::Solve => {
            cfg.grid.build(cfg.grid.points)?;
            cfg.solver.validate(n)?;
        }
        Experiment::Continuation => {
            cfg.grid.build(cfg.grid.points)?;
            let first = cfg.continuation.mu_schedule.first().copied().unwrap_or(f64::NAN);
            SolverConfig {
                mu: first,
                ..cfg.solver
            }
            .validate(n)?;
            if cfg.continuation.weak_tests == 0 {
                return Err(Failure::Config("continuation.weak_tests must be ≥ 1".into()));
            }
        }
        Experiment::Oracle => {
            cfg.grid.build(cfg.grid.points)?;
            let (p, mu) = (cfg.solver.p, cfg.solver.mu);
            if !(p > 1.0 && p <= 2.0) {
                return Err(Failure::Config(format!("need 1 < p ≤ 2, got {p}")));
            }
            if !(0.0..=1.0).contains(&mu) {
                return Err(Failure::Config(format!("oracle needs 0 ≤ μ ≤ 1, got {mu}")));
            }
        }
        Experiment::Constants => {
            cfg.grid.build(cfg.grid.points)?;
            if cfg.constants.qs.is_empty() {
                return Err(Failure::Config("constants.qs must not be empty".into()));
            }
        }
        Experiment::Mms => {
            if cfg.grids.len() < 2 {
                return Err(Failure::Config(format!(
                    "an observed order needs at least two grids, got {}",
                    cfg.grids.len()
                )));
            }
            if cfg.grids.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Failure::Config("grids must be strictly increasing".into()));
            }
            for &m in &cfg.grids {
                cfg.grid.build(m)?;
            }
            cfg.solver.validate(n)?;
            if cfg.mms.amplitudes.is_empty() {
                return Err(Failure::Config("mms.amplitudes must not be empty".into()));
            }
        }
        Experiment::Inequalities => {
            if cfg.samples == 0 {
                return Err(Failure::Config("samples must be ≥ 1".into()));
            }
        }
        Experiment::Report => {
            if cfg.report.inputs.is_empty() {
                return Err(Failure::Config(
                    "report needs at least one input directory".into(),
                ));
            }
        }
    }
    if !(cfg.oracle.tol > 0.0) {
        return Err(Failure::Config("oracle.tol must be > 0".into()));
    }
    Ok(())
}

fn sine_data(grid: &Grid, amplitudes: &[f64], modes: &[usize]) -> Result<VectorField, Failure> {
    let n = grid.n_dims();
    let modes = if modes.is_empty() {
        vec![1; n]
    } else {
        modes.to_vec()
    };
    if modes.len() != n {
        return Err(Failure::Config(format!(
            "need {n} sine modes, got {}",
            modes.len()
        )));
    }
    let w: Vec<f64> = modes
        .iter()
        .zip(grid.extents())
        .map(|(&k, l)| k as f64 * PI / l)
        .collect();
    let f = field_from_fn(grid, amplitudes.len(), |x, out| {
        let s: f64 = x.iter().zip(&w).map(|(x, w)| (w * x).sin()).product();
        for (o, a) in out.iter_mut().zip(amplitudes) {
            *o = a * s;
        }
    });
    Ok(enforce_dirichlet(&f))
}

/// Data `f` on `grid`, with the exact discrete solution when it is known.
pub fn build_data(
    spec: &DataSpec,
    grid: &Grid,
    p: f64,
    mu: f64,
) -> Result<(VectorField, Option<VectorField>), Failure> {
    let nonempty = |v: &[f64]| {
        if v.is_empty() {
            Err(Failure::Config("data needs at least one component".into()))
        } else {
            Ok(())
        }
    };
    match spec {
        DataSpec::Sine { amplitudes, modes } => {
            nonempty(amplitudes)?;
            Ok((sine_data(grid, amplitudes, modes)?, None))
        }
        DataSpec::Constant { values } => {
            nonempty(values)?;
            let f = field_from_fn(grid, values.len(), |_, out| out.copy_from_slice(values));
            Ok((enforce_dirichlet(&f), None))
        }
        DataSpec::Manufactured {
            amplitudes,
            discretization,
        } => {
            nonempty(amplitudes)?;
            let sol = SineBubble::lowest(grid, amplitudes);
            let (u, f) = manufactured_problem(
                |x, out| sol.value(x, out),
                amplitudes.len(),
                p,
                mu,
                grid,
                *discretization,
            )?;
            Ok((f, Some(u)))
        }
        DataSpec::Dump { path } => {
            let f = read_field_dump(path)?;
            if f.grid() != grid {
                return Err(Failure::Config(format!(
                    "{} was written on a different grid than the configured one",
                    path.display()
                )));
            }
            Ok((f, None))
        }
    }
}

/// Constants from `constants.path`, or estimated on `grid` for each of `qs`.
pub fn resolve_constants(
    cfg: &ExperimentConfig,
    grid: &Grid,
    qs: &[f64],
) -> Result<ConstantsReport, Failure> {
    match &cfg.constants.path {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let report: ConstantsReport = serde_json::from_slice(&bytes)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            if report.n_dims != grid.n_dims() {
                return Err(Failure::Config(format!(
                    "{} holds constants for n = {}, the grid has n = {}",
                    path.display(),
                    report.n_dims,
                    grid.n_dims()
                )));
            }
            Ok(report)
        }
        None => Ok(estimate_constants(grid, qs, cfg.constants.plan(cfg.seed))?),
    }
}

fn not_converged(what: &str, converged: bool) -> Verdict {
    if converged {
        Ok(())
    } else {
        Err(format!("{what} did not converge"))
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn solve(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let grid = cfg.grid.build(cfg.grid.points)?;
    let s = &cfg.solver;
    let (f, exact) = build_data(&cfg.data, &grid, s.p, s.mu)?;
    let consts = resolve_constants(cfg, &grid, &[s.q])?;
    SolverConstants::derive(s, &consts)?;
    let (u, trace) = solve_fixed_point(&f, s, &consts)?;

    art.write_field("u.bin", &u)?;
    art.write_json("constants.json", &consts)?;
    art.write("trace.csv", &trace.to_csv()?)?;
    art.write("trace.json", &trace.to_json()?)?;
    let apriori = match verify_apriori(&u, &f, s) {
        Ok(r) => json!(r),
        Err(plap_core::Error::UndefinedRatio(_)) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let exact_error = match &exact {
        Some(ue) => json!(w2q_norm(&u.sub(ue)?, s.q)?),
        None => Value::Null,
    };
    art.write_json(
        SUMMARY,
        &json!({
            "converged": trace.converged,
            "iterations": trace.iterations,
            "ball_violations": trace.ball_violations(),
            "radius": trace.radius,
            "w2q_norm": w2q_norm(&u, s.q)?,
            "apriori_ratio": apriori,
            "exact_error_w2q": exact_error,
            "p_min": trace.constants.p_min,
            "delta": trace.constants.delta,
            "a": trace.constants.a,
        }),
    )?;
    Ok(not_converged("fixed-point iteration", trace.converged))
}

fn oracle(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let grid = cfg.grid.build(cfg.grid.points)?;
    let (p, mu) = (cfg.solver.p, cfg.solver.mu);
    let (f, exact) = build_data(&cfg.data, &grid, p, mu)?;
    let (u, report) = minimize(&f, p, mu, cfg.oracle.tol, cfg.oracle.max_iters)?;

    art.write_field("u.bin", &u)?;
    art.write_json("energy.json", &report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "energy"])
        .map_err(plap_core::Error::from)?;
    for (k, e) in report.history.iter().enumerate() {
        w.write_record([k.to_string(), format!("{e:e}")])
            .map_err(plap_core::Error::from)?;
    }
    art.write(
        "history.csv",
        &w.into_inner().map_err(|e| plap_core::Error::Io(e.into_error()))?,
    )?;
    let exact_error = match &exact {
        Some(ue) => json!(lq_norm(&u.sub(ue)?, 2.0)?),
        None => Value::Null,
    };
    let weak = weak_residual(&u, &f, p, mu, cfg.continuation.weak_tests.max(1), cfg.seed)?;
    art.write_json(
        SUMMARY,
        &json!({
            "converged": report.converged,
            "iterations": report.iterations,
            "energy": report.energy,
            "gradient_norm": report.gradient_norm,
            "weak_residual": weak,
            "exact_error_l2": exact_error,
        }),
    )?;
    Ok(not_converged("energy minimization", report.converged))
}

fn constants(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let grid = cfg.grid.build(cfg.grid.points)?;
    let report = estimate_constants(&grid, &cfg.constants.qs, cfg.constants.plan(cfg.seed))?;
    art.write_json("constants.json", &report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["q", "C2", "C2_over_q", "C3"])
        .map_err(plap_core::Error::from)?;
    for (q, c2) in report.c2_of_q.iter() {
        let c3 = report
            .c3_of_q
            .get(q)
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        w.write_record([format!("{q}"), format!("{c2:e}"), format!("{:e}", c2 / q), c3])
            .map_err(plap_core::Error::from)?;
    }
    art.write(
        "constants.csv",
        &w.into_inner().map_err(|e| plap_core::Error::Io(e.into_error()))?,
    )?;
    let (lo, hi) = report.k_band;
    art.write_json(
        SUMMARY,
        &json!({
            "C1": report.c1,
            "K_min": lo,
            "K_max": hi,
            "K_ratio": finite_or_null(hi / lo),
        }),
    )?;
    Ok(Ok(()))
}

fn inequalities(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let ic = &cfg.inequalities;
    let (n, seed) = (cfg.samples, cfg.seed);
    let appendix = check_appendix(n, seed, ic.components, ic.dims)?;
    let tensor = check_tensor_lipschitz(n, seed, ic.p, &ic.tensor_mu, ic.components, ic.dims)?;
    let young = check_young_type(n, seed, ic.p)?;
    let mu_bounds = check_mu_bounds(n, seed, ic.p, ic.mu)?;

    art.write_json("appendix.json", &appendix)?;
    art.write_json("tensor_lipschitz.json", &tensor)?;
    art.write_json("young_type.json", &young)?;
    art.write_json("mu_bounds.json", &mu_bounds)?;
    let all = [
        appendix,
        tensor,
        young,
        mu_bounds[0].clone(),
        mu_bounds[1].clone(),
    ];
    art.write("sweeps.csv", &sweeps_to_csv(&all)?)?;

    let mut summary = serde_json::Map::new();
    for s in &all {
        summary.insert(format!("{}.violations", s.name), json!(s.violations));
        if let Some(c) = s.empirical_constant {
            summary.insert(format!("{}.empirical_constant", s.name), json!(c));
        }
    }
    art.write_json(SUMMARY, &summary)?;
    let failed: Vec<&str> = all
        .iter()
        .filter(|s| !s.passed())
        .map(|s| s.name.as_str())
        .collect();
    Ok(if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("violations in {}", failed.join(", ")))
    })
}

fn continuation(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let grid = cfg.grid.build(cfg.grid.points)?;
    let s = &cfg.solver;
    let (f, _) = build_data(&cfg.data, &grid, s.p, s.mu)?;
    let consts = resolve_constants(cfg, &grid, &[s.q])?;
    let settings = ContinuationSettings {
        oracle_tol: cfg.oracle.tol,
        oracle_max_iters: cfg.oracle.max_iters,
        weak_tests: cfg.continuation.weak_tests,
        seed: cfg.seed,
    };
    let r = run_continuation(&f, s, &cfg.continuation.mu_schedule, &consts, &settings)?;

    art.write_json("constants.json", &consts)?;
    art.write("continuation.csv", &r.to_csv()?)?;
    art.write("continuation.json", &r.to_json()?)?;
    let last = r.entries.last().expect("schedule is non-empty");
    art.write_json(
        SUMMARY,
        &json!({
            "all_converged": r.all_converged(),
            "w2q_spread": finite_or_null(r.w2q_spread),
            "final_w1p_dist": last.w1p_dist,
            "first_gap": r.first_gap,
            "final_gap": r.final_gap,
            "oracle_limit_dist": r.oracle_limit_dist,
            "monotone_envelope_ok": r.monotone_envelope_ok,
        }),
    )?;
    Ok(not_converged("a solve along the schedule", r.all_converged()))
}

/// One refinement level of a manufactured-solution study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsRow {
    pub points: usize,
    pub h: f64,
    /// `‖u_FP − u_exact‖_{2,q}` with data manufactured for the fixed-point scheme.
    pub same_error_w2q: f64,
    /// `‖u_FP − u_min‖₂`, the oracle solving the continuous data of `u_exact`.
    pub cross_error_l2: f64,
    /// `log(e_prev/e) / log(h_prev/h)` of `cross_error_l2`.
    pub observed_order: Option<f64>,
    pub picard_iters: usize,
    pub picard_converged: bool,
    pub oracle_converged: bool,
    pub ball_violations: usize,
    /// Numerical error that stopped this level, if any.
    pub error: Option<String>,
}

impl MmsRow {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.picard_converged && self.oracle_converged
    }
}

fn mms_level(cfg: &ExperimentConfig, points: usize) -> Result<MmsRow, Failure> {
    let s = &cfg.solver;
    let grid = cfg.grid.build(points)?;
    let sol = SineBubble::lowest(&grid, &cfg.mms.amplitudes);
    let nc = sol.components();
    let consts = resolve_constants(cfg, &grid, &[s.q])?;
    SolverConstants::derive(s, &consts)?;
    let (u_exact, f_nd) = manufactured_problem(
        |x, out| sol.value(x, out),
        nc,
        s.p,
        s.mu,
        &grid,
        plap_core::oracle_minimizer::Discretization::Nondivergence,
    )?;
    let (u, trace) = solve_fixed_point(&f_nd, s, &consts)?;
    let f_cont = plap_core::oracle_minimizer::analytic_rhs(&sol, s.p, s.mu, &grid)?;
    let (um, rep) = minimize(&f_cont, s.p, s.mu, cfg.oracle.tol, cfg.oracle.max_iters)?;
    Ok(MmsRow {
        points,
        h: grid.spacing()[0],
        same_error_w2q: w2q_norm(&u.sub(&u_exact)?, s.q)?,
        cross_error_l2: lq_norm(&u.sub(&um)?, 2.0)?,
        observed_order: None,
        picard_iters: trace.iterations,
        picard_converged: trace.converged,
        oracle_converged: rep.converged,
        ball_violations: trace.ball_violations(),
        error: None,
    })
}

/// Manufactured-solution refinement study over `cfg.grids`.
///
/// The exact solution is the lowest sine mode with `cfg.mms.amplitudes`.
/// Numerical failures on one level are recorded in that row; configuration
/// errors abort the study.
pub fn mms_study(cfg: &ExperimentConfig) -> Result<Vec<MmsRow>, Failure> {
    validate(Experiment::Mms, cfg)?;
    let mut rows: Vec<MmsRow> = Vec::with_capacity(cfg.grids.len());
    for &m in &cfg.grids {
        let mut row = match mms_level(cfg, m) {
            Ok(r) => r,
            Err(Failure::Numerical(e)) => MmsRow {
                points: m,
                h: cfg.grid.build(m)?.spacing()[0],
                same_error_w2q: f64::NAN,
                cross_error_l2: f64::NAN,
                observed_order: None,
                picard_iters: 0,
                picard_converged: false,
                oracle_converged: false,
                ball_violations: 0,
                error: Some(e),
            },
            Err(e) => return Err(e),
        };
        if let Some(prev) = rows.last() {
            let (e0, e1) = (prev.cross_error_l2, row.cross_error_l2);
            if e0 > 0.0 && e1 > 0.0 && e0.is_finite() && e1.is_finite() {
                row.observed_order = Some((e0 / e1).ln() / (prev.h / row.h).ln());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn mms_to_csv(rows: &[MmsRow]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |r: csv::Result<()>| r.map_err(|e| Failure::from(plap_core::Error::from(e)));
    e(w.write_record([
        "points",
        "h",
        "same_error_w2q",
        "cross_error_l2",
        "observed_order",
        "picard_iters",
        "converged",
        "ball_violations",
    ]))?;
    for r in rows {
        e(w.write_record([
            r.points.to_string(),
            format!("{:e}", r.h),
            format!("{:e}", r.same_error_w2q),
            format!("{:e}", r.cross_error_l2),
            r.observed_order.map(|o| format!("{o:.4}")).unwrap_or_default(),
            r.picard_iters.to_string(),
            r.ok().to_string(),
            r.ball_violations.to_string(),
        ]))?;
    }
    w.into_inner()
        .map_err(|e| Failure::from(plap_core::Error::Io(e.into_error())))
}

fn mms(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let rows = mms_study(cfg)?;
    art.write("mms.csv", &mms_to_csv(&rows)?)?;
    art.write_json("mms.json", &rows)?;
    let max_same = rows.iter().map(|r| r.same_error_w2q).fold(0.0, f64::max);
    art.write_json(
        SUMMARY,
        &json!({
            "max_same_error_w2q": finite_or_null(max_same),
            "last_observed_order": rows.last().and_then(|r| r.observed_order),
            "all_converged": rows.iter().all(MmsRow::ok),
        }),
    )?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.ok())
        .map(|r| r.points.to_string())
        .collect();
    Ok(if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("levels {} failed", failed.join(", ")))
    })
}

fn report(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Verdict, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |r: csv::Result<()>| r.map_err(|e| Failure::from(plap_core::Error::from(e)));
    e(w.write_record(["run", "experiment", "status", "metric", "value"]))?;
    let mut runs = Vec::new();
    for dir in &cfg.report.inputs {
        let manifest = Manifest::load(dir)?;
        let summary = read_summary(dir)?;
        let status = match manifest.status {
            Status::Ok => "ok",
            Status::Failed => "failed",
        };
        let run = dir.display().to_string();
        if let Value::Object(map) = &summary {
            for (k, v) in map {
                e(w.write_record([&run, manifest.experiment.name(), status, k, &v.to_string()]))?;
            }
        }
        runs.push(json!({
            "run": run,
            "experiment": manifest.experiment,
            "status": manifest.status,
            "message": manifest.message,
            "summary": summary,
        }));
    }
    art.write(
        "report.csv",
        &w.into_inner()
            .map_err(|e| Failure::from(plap_core::Error::Io(e.into_error())))?,
    )?;
    art.write_json("report.json", &runs)?;
    Ok(Ok(()))
}

fn read_summary(dir: &Path) -> Result<Value, Failure> {
    let path = dir.join(SUMMARY);
    if !path.exists() {
        return Ok(Value::Null);
    }
    let bytes =
        std::fs::read(&path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Whether `dir` holds a finished run.
pub fn is_finished(dir: &Path) -> bool {
    dir.join(MANIFEST).exists()
}

#[cfg(test)]
mod tests {
    use super::*;
    use plap_core::grid::unit_grid;

    fn base(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            out: out.to_path_buf(),
            grid: crate::config::GridConfig {
                points: 9,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn sine_data_vanishes_on_the_boundary() {
        let g = unit_grid(2, 9).unwrap();
        let (f, exact) = build_data(&DataSpec::default(), &g, 1.5, 0.1).unwrap();
        assert!(exact.is_none());
        assert!(f.is_dirichlet_conforming());
        let centre = g.linear_index(&[4, 4]);
        assert!((f.get(0, centre) - 1.0).abs() < 1e-15);
        let bad = DataSpec::Sine {
            amplitudes: vec![1.0],
            modes: vec![1],
        };
        assert_eq!(build_data(&bad, &g, 1.5, 0.1).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn manufactured_data_carries_the_exact_field() {
        let g = unit_grid(2, 9).unwrap();
        let spec = DataSpec::Manufactured {
            amplitudes: vec![1.0, -0.5],
            discretization: plap_core::oracle_minimizer::Discretization::Nondivergence,
        };
        let (f, exact) = build_data(&spec, &g, 1.7, 0.1).unwrap();
        assert_eq!(f.components(), 2);
        assert!(exact.unwrap().is_dirichlet_conforming());
        assert_eq!(build_data(&spec, &g, 1.7, 0.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn validation_catches_bad_configurations() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.grids = vec![17];
        assert_eq!(validate(Experiment::Mms, &cfg).unwrap_err().exit_code(), 2);
        cfg.grids = vec![17, 9];
        assert!(validate(Experiment::Mms, &cfg).is_err());
        let mut cfg = base(dir.path());
        cfg.solver.p = 2.5;
        assert!(validate(Experiment::Solve, &cfg).is_err());
        cfg.solver.p = 1.5;
        cfg.solver.mu = 0.0;
        assert!(validate(Experiment::Solve, &cfg).is_err());
        assert!(validate(Experiment::Oracle, &cfg).is_ok());
        cfg.continuation.mu_schedule.clear();
        assert!(validate(Experiment::Continuation, &cfg).is_err());
        assert!(validate(Experiment::Report, &cfg).is_err());
    }

    #[test]
    fn inadmissible_p_is_a_configuration_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.solver.p = 1.05;
        let err = run(Experiment::Solve, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        assert!(!is_finished(dir.path()));
    }

    #[test]
    fn iteration_cap_is_a_numerical_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.solver.p = 1.6;
        cfg.solver.picard_max_iters = 1;
        cfg.constants.samples = 4;
        let err = run(Experiment::Solve, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.status, Status::Failed);
        assert!(m.outputs.contains(&"trace.csv".to_string()));
    }

    #[test]
    fn orders_use_the_spacing_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.grids = vec![9, 17];
        cfg.solver.p = 2.0;
        cfg.constants.samples = 4;
        let rows = mms_study(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].observed_order.is_none());
        let o = rows[1].observed_order.unwrap();
        assert!((o - 2.0).abs() < 0.3, "order {o}");
        assert!(rows
            .iter()
            .all(|r| r.ok() && r.same_error_w2q <= 10.0 * cfg.solver.picard_tol));
    }
}
