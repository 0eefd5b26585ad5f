//! The limit `μ → 0`: warm-started fixed-point solves along a decreasing
//! schedule, compared against the `μ = 0` energy minimizer.

use serde::{Deserialize, Serialize};

use crate::calculus::{jet, lq_norm, w2q_norm};
use crate::error::{invalid, Error, Result};
use crate::grid::VectorField;
use crate::linear_elliptic::ConstantsReport;
use crate::nonlinear_solver::{ball_radius, solve_fixed_point_from, SolverConfig, SolverConstants};
use crate::oracle_minimizer::{minimize, weak_residual, EnergyReport};

/// `μ_k = 10^{−k}`, `k = 1..=5`.
pub fn default_schedule() -> Vec<f64> {
    (1..=5).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSettings {
    /// Gradient tolerance of the energy minimizations.
    pub oracle_tol: f64,
    pub oracle_max_iters: usize,
    /// Random test fields per weak-residual evaluation.
    pub weak_tests: usize,
    pub seed: u64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            oracle_tol: 1e-10,
            oracle_max_iters: 2000,
            weak_tests: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationEntry {
    pub mu: f64,
    pub w2q_norm: f64,
    /// `‖u_μ‖_{2,q} / R`; `R` does not depend on μ.
    pub bound_ratio: f64,
    /// `‖∇u_μ − ∇u₀‖_p` with central-difference gradients.
    pub w1p_dist: f64,
    /// Weak residual of `u_μ` in the `μ = 0` identity.
    pub weak_residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub ball_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub mu_schedule: Vec<f64>,
    pub entries: Vec<ContinuationEntry>,
    pub radius: f64,
    pub oracle: EnergyReport,
    /// `‖∇(u_FP − u_min)‖_p` at the first μ, both solving the same problem.
    pub first_gap: f64,
    /// The same gap at the last μ; the floor for `w1p_dist` there.
    pub final_gap: f64,
    /// `‖∇(u_min,μ − u_min,0)‖_p` at the last μ, within one discretization.
    pub oracle_limit_dist: f64,
    /// `max/min` of `‖u_μ‖_{2,q}` over the schedule.
    pub w2q_spread: f64,
    pub monotone_envelope_ok: bool,
    pub settings: ContinuationSettings,
}

impl ContinuationReport {
    pub fn all_converged(&self) -> bool {
        self.oracle.converged && self.entries.iter().all(|e| e.converged)
    }

    /// Per-μ CSV: `mu, w2q_norm, w1p_dist, weak_residual, iters, converged`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mu",
            "w2q_norm",
            "w1p_dist",
            "weak_residual",
            "iters",
            "converged",
        ])?;
        for e in &self.entries {
            w.write_record([
                format!("{:e}", e.mu),
                format!("{:e}", e.w2q_norm),
                format!("{:e}", e.w1p_dist),
                format!("{:e}", e.weak_residual),
                e.iters.to_string(),
                e.converged.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

/// `‖∇a − ∇b‖_p` over interior nodes with central differences.
pub fn w1p_distance(a: &VectorField, b: &VectorField, p: f64) -> Result<f64> {
    let d = a.sub(b)?;
    let j = jet(&d);
    lq_norm(&j.grad(), p)
}

/// Whether the running minimum of `dists` drops at least 2× from first to
/// last entry, or ends at or below `floor`.
pub fn monotone_envelope(dists: &[f64], floor: f64) -> bool {
    let Some(&first) = dists.first() else {
        return true;
    };
    let last_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    last_min <= 0.5 * first || last_min <= floor
}

/// Solves at each μ of `mu_schedule`, warm-starting from the previous μ, and
/// compares each solution with the `μ = 0` minimizer of the same energy.
///
/// Inner non-convergence is recorded per μ; the run continues.
pub fn run_continuation(
    f: &VectorField,
    cfg_base: &SolverConfig,
    mu_schedule: &[f64],
    constants: &ConstantsReport,
    settings: &ContinuationSettings,
) -> Result<ContinuationReport> {
    if mu_schedule.is_empty() {
        return Err(invalid("mu_schedule", "must not be empty"));
    }
    if mu_schedule.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
        return Err(invalid("mu_schedule", "every μ must lie in (0, 1]"));
    }
    if mu_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("mu_schedule", "must be strictly decreasing"));
    }
    // validates p, q and admissibility once, before any solve
    let sc = SolverConstants::derive(
        &SolverConfig {
            mu: mu_schedule[0],
            ..*cfg_base
        },
        constants,
    )?;
    let radius = ball_radius(sc.a, f, cfg_base.q, cfg_base.p)?;
    let p = cfg_base.p;

    let (u0, oracle) = minimize(f, p, 0.0, settings.oracle_tol, settings.oracle_max_iters)?;

    let mut entries = Vec::with_capacity(mu_schedule.len());
    let mut v = VectorField::zeros(f.grid(), f.components());
    let (mut first_gap, mut final_gap, mut oracle_limit_dist) = (0.0, 0.0, 0.0);
    let last = mu_schedule.len() - 1;
    for (k, &mu) in mu_schedule.iter().enumerate() {
        let cfg = SolverConfig { mu, ..*cfg_base };
        let (u, trace) = solve_fixed_point_from(&v, f, &cfg, constants)?;
        if k == 0 || k == last {
            let (um, _) = minimize(f, p, mu, settings.oracle_tol, settings.oracle_max_iters)?;
            let gap = w1p_distance(&u, &um, p)?;
            if k == 0 {
                first_gap = gap;
            }
            if k == last {
                final_gap = gap;
                oracle_limit_dist = w1p_distance(&um, &u0, p)?;
            }
        }
        let w2q = w2q_norm(&u, cfg.q)?;
        entries.push(ContinuationEntry {
            mu,
            w2q_norm: w2q,
            bound_ratio: if radius > 0.0 { w2q / radius } else { 0.0 },
            w1p_dist: w1p_distance(&u, &u0, p)?,
            weak_residual: weak_residual(&u, f, p, 0.0, settings.weak_tests, settings.seed)?,
            iters: trace.iterations,
            converged: trace.converged,
            ball_violations: trace.ball_violations(),
        });
        v = u;
    }
    let norms: Vec<f64> = entries.iter().map(|e| e.w2q_norm).collect();
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let w2q_spread = if lo > 0.0 {
        hi / lo
    } else if hi == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let dists: Vec<f64> = entries.iter().map(|e| e.w1p_dist).collect();
    Ok(ContinuationReport {
        mu_schedule: mu_schedule.to_vec(),
        monotone_envelope_ok: monotone_envelope(&dists, settings.oracle_tol),
        entries,
        radius,
        oracle,
        first_gap,
        final_gap,
        oracle_limit_dist,
        w2q_spread,
        settings: *settings,
    })
}
