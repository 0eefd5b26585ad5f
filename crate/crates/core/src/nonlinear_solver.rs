//! The linearized map `F` and its damped fixed-point iteration.
//!
//! For `μ > 0` the system is written in nondivergence form
//!
//! ```text
//! −Δu − (p−2) S(u) = f (μ + |∇u|)^{2−p},   S(u) = ∇u·∇∇u·∇u / ((μ + |∇u|)|∇u|),
//! ```
//!
//! and `F(v)` is the Dirichlet solution of `−Δu = (p−2) S(v) + f (μ + |∇v|)^{2−p}`.
//! Data norms `‖f‖_q` are taken over interior nodes, where the equation lives.

use serde::{Deserialize, Serialize};

use crate::calculus::{cubic_at, jet, lap_norm, lq_norm, w2q_norm, Interior, Jet};
use crate::error::{invalid, Error, Result};
use crate::grid::{enforce_dirichlet, VectorField};
use crate::linear_elliptic::{solve_poisson, ConstantsReport, PoissonSolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub p: f64,
    pub mu: f64,
    pub q: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub damping_theta: f64,
    /// `|∇v|` below which the singular quotient is set to zero.
    pub sing_guard: f64,
    /// Multiplier applied to estimated `C₂`, `C₃` before use.
    pub safety_factor: f64,
    /// Relative tolerance of each inner Poisson solve.
    pub poisson_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            p: 2.0,
            mu: 0.1,
            q: 2.0,
            picard_tol: 1e-8,
            picard_max_iters: 200,
            damping_theta: 1.0,
            sing_guard: 1e-12,
            safety_factor: 1.25,
            poisson_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    /// Checks ranges that do not depend on constants. `q = n` is rejected
    /// except for `q = 2`, which is always allowed.
    pub fn validate(&self, n_dims: usize) -> Result<()> {
        check_p(self.p)?;
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(invalid(
                "mu",
                format!("fixed-point solves need 0 < μ ≤ 1, got {}", self.mu),
            ));
        }
        if !(self.q >= 2.0) || self.q.is_infinite() {
            return Err(invalid("q", format!("need finite q ≥ 2, got {}", self.q)));
        }
        if self.q == n_dims as f64 && self.q != 2.0 {
            return Err(invalid("q", format!("q = n = {n_dims} is excluded")));
        }
        if !(self.picard_tol > 0.0) {
            return Err(invalid("picard_tol", "must be > 0"));
        }
        if !(self.damping_theta > 0.0 && self.damping_theta <= 1.0) {
            return Err(invalid("damping_theta", "must lie in (0, 1]"));
        }
        if !(self.sing_guard >= 0.0) {
            return Err(invalid("sing_guard", "must be ≥ 0"));
        }
        if !(self.safety_factor >= 1.0) {
            return Err(invalid("safety_factor", "must be ≥ 1"));
        }
        if !(self.poisson_tol > 0.0) {
            return Err(invalid("poisson_tol", "must be > 0"));
        }
        Ok(())
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p <= 2.0 {
        Ok(())
    } else {
        Err(invalid("p", format!("need 1 < p ≤ 2, got {p}")))
    }
}

/// Exponent of the data space: `nq/(n(p−1) + q(2−p))` for `q ≤ n`, else `q`.
pub fn r_of_q(q: f64, p: f64, n: usize) -> f64 {
    let n = n as f64;
    if q <= n {
        n * q / (n * (p - 1.0) + q * (2.0 - p))
    } else {
        q
    }
}

/// Smallest admissible exponent: `p` is admissible iff `p > 2 − 1/C₂`.
pub fn admissible_p_min(c2_used: f64) -> f64 {
    2.0 - 1.0 / c2_used
}

/// Minimal `a > 0` with `1 + 2 C₃^{2−p} a^{2−p} ≤ aδ`, to relative accuracy 1e−10.
///
/// The returned value always satisfies the inequality.
pub fn compute_a(delta: f64, c3: f64, p: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("need δ > 0, got {delta}")));
    }
    check_p(p)?;
    let e = 2.0 - p;
    let g = |a: f64| a * delta - 1.0 - 2.0 * c3.powf(e) * a.powf(e);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `‖f‖_q` over interior nodes.
pub fn data_norm(f: &VectorField, q: f64) -> Result<f64> {
    lq_norm(&Interior(f), q)
}

/// `‖f‖_q + ‖f‖_{r(q)}^{1/(p−1)}`.
pub fn data_functional(f: &VectorField, q: f64, p: f64) -> Result<f64> {
    let r = r_of_q(q, p, f.grid().n_dims());
    Ok(data_norm(f, q)? + data_norm(f, r)?.powf(1.0 / (p - 1.0)))
}

/// `R = a (‖f‖_q + ‖f‖_{r(q)}^{1/(p−1)})`.
pub fn ball_radius(a: f64, f: &VectorField, q: f64, p: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid("a", "must be > 0"));
    }
    Ok(a * data_functional(f, q, p)?)
}

/// Raw and inflated constants, `δ` and `a` for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConstants {
    pub c2_raw: f64,
    pub c3_raw: f64,
    pub c2_used: f64,
    pub c3_used: f64,
    pub p_min: f64,
    pub delta: f64,
    pub a: f64,
}

impl SolverConstants {
    /// Validates `cfg` and derives the constants; fails if `(2−p) C₂_used ≥ 1`.
    pub fn derive(cfg: &SolverConfig, report: &ConstantsReport) -> Result<Self> {
        cfg.validate(report.n_dims)?;
        let c2_raw = report.c2(cfg.q)?;
        let c3_raw = report.c3(cfg.q)?;
        let c2_used = cfg.safety_factor * c2_raw;
        let c3_used = cfg.safety_factor * c3_raw;
        let delta = 1.0 - (2.0 - cfg.p) * c2_used;
        let p_min = admissible_p_min(c2_used);
        if !(delta > 0.0) {
            return Err(invalid(
                "p",
                format!(
                    "p = {} inadmissible: need p > {p_min:.6} (C₂_used = {c2_used:.6})",
                    cfg.p
                ),
            ));
        }
        Ok(SolverConstants {
            c2_raw,
            c3_raw,
            c2_used,
            c3_used,
            p_min,
            delta,
            a: compute_a(delta, c3_used, cfg.p)?,
        })
    }
}

/// `S(v)` at interior nodes, zero where `|∇v| < guard` and on the boundary.
pub fn singular_term(j: &Jet, mu: f64, guard: f64) -> VectorField {
    let grid = *j.grid();
    let nc = j.components();
    let n = grid.n_dims();
    let mut out = VectorField::zeros(&grid, nc);
    let mut buf = vec![0.0; nc];
    for node in grid.interior_nodes() {
        let g = j.grad_norm(node);
        if g < guard || g == 0.0 {
            continue;
        }
        cubic_at(j.grad_at(node), j.hess_at(node), nc, n, &mut buf);
        let denom = (mu + g) * g;
        for (c, b) in buf.iter().enumerate() {
            out.set(c, node, b / denom);
        }
        debug_assert!(
            out.magnitude_sq(node).sqrt() <= g * j.hess_norm(node) / (mu + g) * (1.0 + 1e-10) + 1e-300
        );
    }
    out
}

/// Right-hand side `(p−2) S(v) + f (μ + |∇v|)^{2−p}` of the linearized problem.
pub fn linearized_rhs(v: &VectorField, f: &VectorField, cfg: &SolverConfig) -> Result<VectorField> {
    v.same_shape(f)?;
    let j = jet(v);
    let s = singular_term(&j, cfg.mu, cfg.sing_guard);
    let grid = *v.grid();
    let mut rhs = VectorField::zeros(&grid, v.components());
    for node in grid.interior_nodes() {
        let w = (cfg.mu + j.grad_norm(node)).powf(2.0 - cfg.p);
        for c in 0..v.components() {
            rhs.set(c, node, (cfg.p - 2.0) * s.get(c, node) + f.get(c, node) * w);
        }
    }
    Ok(rhs)
}

/// `F(v)`: the Dirichlet Poisson solve with the linearized right-hand side.
///
/// An unconverged inner solve is an error.
pub fn apply_f(
    v: &VectorField,
    f: &VectorField,
    cfg: &SolverConfig,
) -> Result<(VectorField, PoissonSolveReport)> {
    let rhs = linearized_rhs(v, f, cfg)?;
    let (u, rep) = solve_poisson(v.grid(), &rhs, cfg.poisson_tol)?;
    if !rep.converged {
        return Err(Error::PoissonNotConverged {
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    Ok((u, rep))
}

/// Interior residual `−Δ_h u − (p−2) S(u) − f (μ + |∇u|)^{2−p}`.
pub fn nondivergence_residual(u: &VectorField, f: &VectorField, cfg: &SolverConfig) -> Result<VectorField> {
    let rhs = linearized_rhs(u, f, cfg)?;
    let j = jet(u);
    let grid = *u.grid();
    let mut out = VectorField::zeros(&grid, u.components());
    for node in grid.interior_nodes() {
        for c in 0..u.components() {
            out.set(c, node, -j.lap_at(node)[c] - rhs.get(c, node));
        }
    }
    Ok(out)
}

/// Right-hand side of `‖Δ_h F(v)‖_q ≤ (2−p)‖D²v‖_q + ‖f‖_q + ‖|∇v|^{2−p} f‖_q`,
/// valid for `μ ≤ 1`.
pub fn chain_bound(v: &VectorField, f: &VectorField, p: f64, q: f64) -> Result<f64> {
    v.same_shape(f)?;
    let j = jet(v);
    let grid = *v.grid();
    let mut weighted = VectorField::zeros(&grid, f.components());
    for node in grid.interior_nodes() {
        let w = j.grad_norm(node).powf(2.0 - p);
        for c in 0..f.components() {
            weighted.set(c, node, w * f.get(c, node));
        }
    }
    Ok((2.0 - p) * lq_norm(&j.hess(), q)? + data_norm(f, q)? + data_norm(&weighted, q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// `‖Δ_h v_k‖_q`.
    pub lap_norm_q: f64,
    /// `‖Δ_h (v_{k+1} − v_k)‖_q`.
    pub update_norm_q: f64,
    pub theta: f64,
    pub ball_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    /// Index of the row that met the stopping rule, or of the best row.
    pub iterations: usize,
    pub radius: f64,
    pub constants: SolverConstants,
}

impl IterationTrace {
    pub fn ball_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.ball_violation).count()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

/// Damped Picard iteration from `v₀ = 0`. See [`solve_fixed_point_from`].
pub fn solve_fixed_point(
    f: &VectorField,
    cfg: &SolverConfig,
    constants: &ConstantsReport,
) -> Result<(VectorField, IterationTrace)> {
    let v0 = VectorField::zeros(f.grid(), f.components());
    solve_fixed_point_from(&v0, f, cfg, constants)
}

/// Damped Picard iteration `v_{k+1} = (1−θ) v_k + θ F(v_k)`.
///
/// Stops once `‖Δ_h(v_{k+1} − v_k)‖_q ≤ picard_tol`. Three consecutive
/// increases of the update halve `θ`. When the cap is hit, the iterate with
/// the smallest update is returned and `converged` is false.
pub fn solve_fixed_point_from(
    v0: &VectorField,
    f: &VectorField,
    cfg: &SolverConfig,
    constants: &ConstantsReport,
) -> Result<(VectorField, IterationTrace)> {
    v0.same_shape(f)?;
    let sc = SolverConstants::derive(cfg, constants)?;
    if f.grid().n_dims() != constants.n_dims {
        return Err(invalid("constants", "estimated for a different dimension"));
    }
    let radius = ball_radius(sc.a, f, cfg.q, cfg.p)?;
    let mut v = enforce_dirichlet(v0);
    let mut theta = cfg.damping_theta;
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, VectorField)> = None;
    let mut prev = f64::INFINITY;
    let mut increases = 0;

    for k in 0..=cfg.picard_max_iters {
        let lap_k = lap_norm(&v, cfg.q)?;
        let (w, _) = apply_f(&v, f, cfg)?;
        let next = v.combine(1.0 - theta, &w, theta)?;
        let d = lap_norm(&next.sub(&v)?, cfg.q)?;
        rows.push(TraceRow {
            k,
            lap_norm_q: lap_k,
            update_norm_q: d,
            theta,
            ball_violation: lap_k > radius,
        });
        if d <= cfg.picard_tol {
            let trace = IterationTrace {
                rows,
                converged: true,
                iterations: k,
                radius,
                constants: sc,
            };
            return Ok((next, trace));
        }
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, k, next.clone()));
        }
        increases = if d > prev { increases + 1 } else { 0 };
        if increases == 3 {
            theta *= 0.5;
            increases = 0;
        }
        prev = d;
        v = next;
    }
    let (_, k, u) = best.expect("at least one iteration runs");
    let trace = IterationTrace {
        rows,
        converged: false,
        iterations: k,
        radius,
        constants: sc,
    };
    Ok((u, trace))
}

/// `‖u‖_{2,q} / (‖f‖_q + ‖f‖_{r(q)}^{1/(p−1)})`.
pub fn verify_apriori(u: &VectorField, f: &VectorField, cfg: &SolverConfig) -> Result<f64> {
    check_p(cfg.p)?;
    let den = data_functional(f, cfg.q, cfg.p)?;
    let num = w2q_norm(u, cfg.q)?;
    if den == 0.0 {
        return Err(Error::UndefinedRatio(format!(
            "data functional vanishes (‖u‖_2,q = {num:e})"
        )));
    }
    Ok(num / den)
}
