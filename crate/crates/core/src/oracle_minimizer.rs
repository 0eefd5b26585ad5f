//! Weak-solution oracle: minimization of the convex energy
//!
//! ```text
//! J(u) = Σ_cells ψ(|∇_h u|)·vol − Σ_interior f·u·vol,
//! ψ(t) = (μ+t)^p/p − μ(μ+t)^{p−1}/(p−1) + μ^p/(p(p−1)),   ψ′(t) = (μ+t)^{p−2} t.
//! ```
//!
//! Each cell carries the `2ⁿ` one-sided gradients anchored at its corners, each
//! with weight `2⁻ⁿ`. Every gradient is a forward difference along cell edges,
//! so discrete integration by parts is exact, `p = 2` yields the `2n+1`-point
//! Laplacian, and the corner average is second-order consistent.
//! Valid for every `μ ≥ 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calculus::{cubic_at, jet};
use crate::error::{invalid, Result};
use crate::grid::{check_positive, enforce_dirichlet, field_from_fn, Grid, VectorField, MAX_DIMS};
use crate::linear_elliptic::{conjugate_gradient, interior_l2};
use crate::nonlinear_solver::{check_p, singular_term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy: f64,
    /// Interior `L²` norm of the energy gradient.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `J` after every accepted step, starting with the initial guess.
    pub history: Vec<f64>,
}

pub fn psi(t: f64, p: f64, mu: f64) -> f64 {
    psi_diff(0.0, t, t, p, mu)
}

pub fn psi_prime(t: f64, p: f64, mu: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        (mu + t).powf(p - 2.0) * t
    }
}

fn psi_direct(t: f64, p: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return t.powf(p) / p;
    }
    let s = mu + t;
    s.powf(p) / p - mu * s.powf(p - 1.0) / (p - 1.0) + mu.powf(p) / (p * (p - 1.0))
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `ψ(t1) − ψ(t0)` given `dt = t1 − t0` computed without cancellation.
fn psi_diff(t0: f64, t1: f64, dt: f64, p: f64, mu: f64) -> f64 {
    if dt == 0.0 {
        return 0.0;
    }
    if dt.abs() <= 0.05 * (mu + t0.min(t1)) {
        let mid = t0 + 0.5 * dt;
        let s: f64 = GL5
            .iter()
            .map(|&(x, w)| w * psi_prime(mid + 0.5 * dt * x, p, mu))
            .sum();
        0.5 * dt * s
    } else {
        psi_direct(t1, p, mu) - psi_direct(t0, p, mu)
    }
}

/// One-sided cell gradients: for every cell and corner, one edge pair per axis.
struct CellStencil {
    grid: Grid,
    n: usize,
    pairs: Vec<[(usize, usize); MAX_DIMS]>,
    inv_h: [f64; MAX_DIMS],
    weight: f64,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl CellStencil {
    fn new(grid: &Grid) -> Self {
        let n = grid.n_dims();
        let mut pairs = Vec::with_capacity(grid.cell_count() << n);
        for origin in grid.cell_origins() {
            for corner in 0..(1usize << n) {
                let mut pr = [(0, 0); MAX_DIMS];
                for (j, slot) in pr.iter_mut().enumerate().take(n) {
                    let base = origin
                        + (0..n)
                            .filter(|&k| k != j && (corner >> k) & 1 == 1)
                            .map(|k| grid.stride(k))
                            .sum::<usize>();
                    *slot = (base, base + grid.stride(j));
                }
                pairs.push(pr);
            }
        }
        let mut inv_h = [0.0; MAX_DIMS];
        for a in 0..n {
            inv_h[a] = 1.0 / grid.spacing()[a];
        }
        CellStencil {
            grid: *grid,
            n,
            pairs,
            inv_h,
            weight: 0.5f64.powi(n as i32),
            interior: grid.interior_nodes(),
            boundary: grid.boundary_nodes(),
        }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Gradients of one component, layout `[e][j]`.
    fn scalar_gradients(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (e, pr) in self.pairs.iter().enumerate() {
            for j in 0..n {
                let (a, b) = pr[j];
                out[e * n + j] = (x[b] - x[a]) * self.inv_h[j];
            }
        }
    }

    /// Gradients of all components, layout `[e][i][j]`.
    fn gradients(&self, u: &VectorField) -> Vec<f64> {
        let (n, nc) = (self.n, u.components());
        let mut out = vec![0.0; self.len() * nc * n];
        let mut buf = vec![0.0; self.len() * n];
        for i in 0..nc {
            self.scalar_gradients(u.component(i), &mut buf);
            for e in 0..self.len() {
                out[(e * nc + i) * n..(e * nc + i + 1) * n].copy_from_slice(&buf[e * n..(e + 1) * n]);
            }
        }
        out
    }

    /// `out = Gᵀ flux` for one component (flux layout `[e][j]`), boundary zeroed.
    fn scatter(&self, flux: impl Fn(usize, usize) -> f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, pr) in self.pairs.iter().enumerate() {
            for j in 0..self.n {
                let (a, b) = pr[j];
                let v = flux(e, j) * self.inv_h[j] * self.weight;
                out[b] += v;
                out[a] -= v;
            }
        }
        for &b in &self.boundary {
            out[b] = 0.0;
        }
    }

    fn magnitudes(&self, grads: &[f64], width: usize) -> Vec<f64> {
        grads
            .chunks_exact(width)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// `Gᵀ(a(|Gu|) Gu)` with `a(t) = (μ+t)^{p−2}`, zero flux where `t = 0`.
    fn divergence_term(&self, u: &VectorField, p: f64, mu: f64) -> VectorField {
        let (n, nc) = (self.n, u.components());
        let grads = self.gradients(u);
        let t = self.magnitudes(&grads, nc * n);
        let coef: Vec<f64> = t
            .iter()
            .map(|&t| if t == 0.0 { 0.0 } else { psi_prime(t, p, mu) / t })
            .collect();
        let mut out = VectorField::zeros(&self.grid, nc);
        for i in 0..nc {
            self.scatter(|e, j| coef[e] * grads[(e * nc + i) * n + j], out.component_mut(i));
        }
        out
    }

    fn energy(&self, u: &VectorField, f: &VectorField, p: f64, mu: f64) -> f64 {
        let nc = u.components();
        let grads = self.gradients(u);
        let vol = self.grid.cell_volume();
        let stored: f64 = self
            .magnitudes(&grads, nc * self.n)
            .iter()
            .map(|&t| psi(t, p, mu))
            .sum();
        let load: f64 = (0..nc)
            .map(|c| {
                self.interior
                    .iter()
                    .map(|&k| f.get(c, k) * u.get(c, k))
                    .sum::<f64>()
            })
            .sum();
        (stored * self.weight - load) * vol
    }
}

fn check_inputs(u: &VectorField, f: &VectorField, p: f64, mu: f64) -> Result<()> {
    check_p(p)?;
    if !(mu >= 0.0) || mu.is_infinite() {
        return Err(invalid("mu", format!("need finite μ ≥ 0, got {mu}")));
    }
    u.same_shape(f)
}

/// Discrete energy `J(u)`.
pub fn energy(u: &VectorField, f: &VectorField, p: f64, mu: f64) -> Result<f64> {
    check_inputs(u, f, p, mu)?;
    Ok(CellStencil::new(u.grid()).energy(u, f, p, mu))
}

/// `L²` gradient of `J`: `−div_h((μ+|∇_h u|)^{p−2} ∇_h u) − f` on the interior,
/// zero on the boundary. Equals `(∂J/∂u_k)/vol` at interior nodes.
pub fn energy_gradient(u: &VectorField, f: &VectorField, p: f64, mu: f64) -> Result<VectorField> {
    check_inputs(u, f, p, mu)?;
    let ops = CellStencil::new(u.grid());
    Ok(gradient_with(&ops, u, f, p, mu))
}

fn gradient_with(ops: &CellStencil, u: &VectorField, f: &VectorField, p: f64, mu: f64) -> VectorField {
    let mut g = ops.divergence_term(u, p, mu);
    for c in 0..u.components() {
        for &k in &ops.interior {
            let v = g.get(c, k) - f.get(c, k);
            g.set(c, k, v);
        }
    }
    g
}

fn field_l2(ops: &CellStencil, v: &VectorField) -> f64 {
    (0..v.components())
        .map(|c| interior_l2(&ops.grid, &ops.interior, v.component(c)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimizes `J` from `u = 0`. See [`minimize_from`].
pub fn minimize(
    f: &VectorField,
    p: f64,
    mu: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(VectorField, EnergyReport)> {
    let u0 = VectorField::zeros(f.grid(), f.components());
    minimize_from(&u0, f, p, mu, tol, max_iters)
}

/// Preconditioned descent on `J` with an Armijo backtracking line search.
///
/// Directions solve `Gᵀ(a Gd) = −∇J` with the coefficient `a` frozen at the
/// current iterate. Every accepted step strictly decreases `J`. Stops when the
/// interior `L²` gradient norm is at most `tol·max(1, ‖f‖₂)`.
pub fn minimize_from(
    u0: &VectorField,
    f: &VectorField,
    p: f64,
    mu: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(VectorField, EnergyReport)> {
    check_inputs(u0, f, p, mu)?;
    check_positive("tol", tol)?;
    let ops = CellStencil::new(f.grid());
    let (n, nc) = (ops.n, f.components());
    let vol = ops.grid.cell_volume();
    let target = tol * field_l2(&ops, f).max(1.0);
    let mut u = enforce_dirichlet(u0);
    let mut history = vec![ops.energy(&u, f, p, mu)];
    let mut iterations = 0;
    let mut converged = false;
    let mut g = gradient_with(&ops, &u, f, p, mu);
    let mut g_norm = field_l2(&ops, &g);

    while iterations < max_iters {
        if g_norm <= target {
            converged = true;
            break;
        }
        let b0 = ops.gradients(&u);
        let t0 = ops.magnitudes(&b0, nc * n);
        let coef = frozen_coefficient(&t0, p, mu);

        let mut d = VectorField::zeros(&ops.grid, nc);
        let mut gx = vec![0.0; ops.len() * n];
        for c in 0..nc {
            let rhs: Vec<f64> = g.component(c).iter().map(|v| -v).collect();
            let cg_tol = 1e-4 * interior_l2(&ops.grid, &ops.interior, &rhs);
            conjugate_gradient(
                |x, y| {
                    ops.scalar_gradients(x, &mut gx);
                    ops.scatter(|e, j| coef[e] * gx[e * n + j], y);
                },
                &ops.interior,
                vol,
                &rhs,
                d.component_mut(c),
                cg_tol,
                4 * ops.interior.len() + 100,
            );
        }
        let mut slope = inner(&ops, &g, &d) * vol;
        if !(slope < 0.0) {
            d = g.scaled(-1.0);
            slope = inner(&ops, &g, &d) * vol;
        }
        let db = ops.gradients(&d);
        let load_d: f64 = inner(&ops, f, &d) * vol;
        let phi = |alpha: f64| -> f64 {
            let mut s = 0.0;
            for e in 0..ops.len() {
                let w = nc * n;
                let (b, q) = (&b0[e * w..(e + 1) * w], &db[e * w..(e + 1) * w]);
                let mut bq = 0.0;
                let mut qq = 0.0;
                let mut t1sq = 0.0;
                for k in 0..w {
                    bq += b[k] * q[k];
                    qq += q[k] * q[k];
                    let v = b[k] + alpha * q[k];
                    t1sq += v * v;
                }
                let t1 = t1sq.sqrt();
                let den = t1 + t0[e];
                let dt = if den > 0.0 {
                    (2.0 * alpha * bq + alpha * alpha * qq) / den
                } else {
                    0.0
                };
                s += psi_diff(t0[e], t1, dt, p, mu);
            }
            s * ops.weight * vol - alpha * load_d
        };
        let Some((alpha, decrease)) = line_search(phi, slope) else {
            break;
        };
        u = u.combine(1.0, &d, alpha)?;
        let last = *history.last().expect("history starts non-empty");
        history.push(last + decrease);
        iterations += 1;
        g = gradient_with(&ops, &u, f, p, mu);
        g_norm = field_l2(&ops, &g);
    }
    if !converged && g_norm <= target {
        converged = true;
    }
    let report = EnergyReport {
        energy: ops.energy(&u, f, p, mu),
        gradient_norm: g_norm,
        iterations,
        converged,
        history,
    };
    Ok((u, report))
}

/// `(μ + t)^{p−2}` with `t` floored at `10⁻⁶ max t` when `μ = 0`.
fn frozen_coefficient(t: &[f64], p: f64, mu: f64) -> Vec<f64> {
    let t_max = t.iter().copied().fold(0.0, f64::max);
    if mu == 0.0 && t_max == 0.0 {
        return vec![1.0; t.len()];
    }
    let floor = if mu == 0.0 { 1e-6 * t_max } else { 0.0 };
    t.iter().map(|&t| (mu + t.max(floor)).powf(p - 2.0)).collect()
}

fn inner(ops: &CellStencil, a: &VectorField, b: &VectorField) -> f64 {
    (0..a.components())
        .map(|c| {
            ops.interior
                .iter()
                .map(|&k| a.get(c, k) * b.get(c, k))
                .sum::<f64>()
        })
        .sum()
}

/// Armijo backtracking from `α = 1`, also trying the minimizer of the
/// quadratic through `φ(0) = 0`, `φ′(0)` and `φ(1)`. Returns `(α, φ(α))` with
/// `φ(α) < 0`, or `None` if no decrease is found.
fn line_search(phi: impl Fn(f64) -> f64, slope: f64) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    let phi1 = phi(1.0);
    let mut best = (phi1 <= C1 * slope).then_some((1.0, phi1));
    let curv = phi1 - slope;
    if curv > 0.0 {
        let a = -slope / (2.0 * curv);
        if a > 0.0 && a.is_finite() && a != 1.0 {
            let v = phi(a);
            if v <= C1 * a * slope && best.is_none_or(|b| v < b.1) {
                best = Some((a, v));
            }
        }
    }
    if best.is_some() {
        return best.filter(|b| b.1 < 0.0);
    }
    let mut alpha = 0.5;
    while alpha > 1e-12 {
        let v = phi(alpha);
        if v <= C1 * alpha * slope && v < 0.0 {
            return Some((alpha, v));
        }
        alpha *= 0.5;
    }
    None
}

/// Which discrete operator generates manufactured data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Central differences in nondivergence form, as used by the fixed-point solver.
    Nondivergence,
    /// The cell-based divergence form minimized by this module.
    Variational,
}

/// Samples `u_exact_fn` and computes the data `f` for which the samples are an
/// exact discrete solution of the chosen discretization.
pub fn manufactured_problem<F>(
    u_exact_fn: F,
    components: usize,
    p: f64,
    mu: f64,
    grid: &Grid,
    discretization: Discretization,
) -> Result<(VectorField, VectorField)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    check_p(p)?;
    let raw = field_from_fn(grid, components, u_exact_fn);
    let scale = raw.max_abs().max(1.0);
    let trace = grid
        .boundary_nodes()
        .into_iter()
        .flat_map(|k| (0..components).map(move |c| (c, k)))
        .map(|(c, k)| raw.get(c, k).abs())
        .fold(0.0, f64::max);
    if trace > 1e-12 * scale {
        return Err(invalid(
            "u_exact_fn",
            format!("boundary values up to {trace:e}; must vanish"),
        ));
    }
    let u = enforce_dirichlet(&raw);
    let f = match discretization {
        Discretization::Nondivergence => {
            if !(mu > 0.0) {
                return Err(invalid("mu", "nondivergence data needs μ > 0"));
            }
            let j = jet(&u);
            let s = singular_term(&j, mu, 1e-12);
            let mut f = VectorField::zeros(grid, components);
            for k in grid.interior_nodes() {
                let w = (mu + j.grad_norm(k)).powf(p - 2.0);
                for c in 0..components {
                    f.set(c, k, (-j.lap_at(k)[c] - (p - 2.0) * s.get(c, k)) * w);
                }
            }
            f
        }
        Discretization::Variational => {
            if !(mu >= 0.0) {
                return Err(invalid("mu", "need μ ≥ 0"));
            }
            CellStencil::new(grid).divergence_term(&u, p, mu)
        }
    };
    Ok((u, f))
}

/// A smooth field with analytic derivatives, vanishing on the box boundary.
pub trait ExactSolution {
    fn components(&self) -> usize;
    fn value(&self, x: &[f64], out: &mut [f64]);
    /// `N×n`, entry `[i*n + j] = ∂_j u_i`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// `N×n×n`, entry `[(i*n + j)*n + l] = ∂²_{jl} u_i`.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// `u_i(x) = c_i Π_j sin(k_j π x_j / L_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineBubble {
    pub amplitudes: Vec<f64>,
    pub modes: Vec<usize>,
    pub extents: Vec<f64>,
}

impl SineBubble {
    /// Lowest mode on `grid`'s box with the given amplitudes.
    pub fn lowest(grid: &Grid, amplitudes: &[f64]) -> Self {
        SineBubble {
            amplitudes: amplitudes.to_vec(),
            modes: vec![1; grid.n_dims()],
            extents: grid.extents().to_vec(),
        }
    }

    fn factors(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w: Vec<f64> = self
            .modes
            .iter()
            .zip(&self.extents)
            .map(|(&k, l)| k as f64 * std::f64::consts::PI / l)
            .collect();
        let s = x.iter().zip(&w).map(|(x, w)| (w * x).sin()).collect();
        let c = x.iter().zip(&w).map(|(x, w)| (w * x).cos()).collect();
        (w, s, c)
    }

    /// Value, first and second derivatives of the scalar product of sines.
    fn shape(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = x.len();
        let (w, s, c) = self.factors(x);
        let prod_except =
            |skip: &[usize]| -> f64 { (0..n).filter(|k| !skip.contains(k)).map(|k| s[k]).product() };
        let v = prod_except(&[]);
        let g = (0..n).map(|j| w[j] * c[j] * prod_except(&[j])).collect();
        let mut h = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                h[j * n + l] = if j == l {
                    -w[j] * w[j] * v
                } else {
                    w[j] * c[j] * w[l] * c[l] * prod_except(&[j, l])
                };
            }
        }
        (v, g, h)
    }
}

impl ExactSolution for SineBubble {
    fn components(&self) -> usize {
        self.amplitudes.len()
    }
    fn value(&self, x: &[f64], out: &mut [f64]) {
        let (v, _, _) = self.shape(x);
        for (o, a) in out.iter_mut().zip(&self.amplitudes) {
            *o = a * v;
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (_, g, _) = self.shape(x);
        let n = g.len();
        for (i, a) in self.amplitudes.iter().enumerate() {
            for j in 0..n {
                out[i * n + j] = a * g[j];
            }
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let (_, _, h) = self.shape(x);
        let nn = h.len();
        for (i, a) in self.amplitudes.iter().enumerate() {
            for k in 0..nn {
                out[i * nn + k] = a * h[k];
            }
        }
    }
}

/// Continuous data `−div((μ+|∇u|)^{p−2}∇u)` of `sol` sampled at interior nodes.
///
/// Needs `μ > 0` or a solution whose gradient does not vanish in the interior.
pub fn analytic_rhs(sol: &impl ExactSolution, p: f64, mu: f64, grid: &Grid) -> Result<VectorField> {
    check_p(p)?;
    let (nc, n) = (sol.components(), grid.n_dims());
    let mut grad = vec![0.0; nc * n];
    let mut hess = vec![0.0; nc * n * n];
    let mut cubic = vec![0.0; nc];
    let mut f = VectorField::zeros(grid, nc);
    for k in grid.interior_nodes() {
        let x = grid.position(k);
        sol.gradient(&x[..n], &mut grad);
        sol.hessian(&x[..n], &mut hess);
        let t = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if t == 0.0 && mu == 0.0 {
            return Err(invalid("mu", "μ = 0 data is singular where ∇u vanishes"));
        }
        let w = (mu + t).powf(p - 2.0);
        cubic_at(&grad, &hess, nc, n, &mut cubic);
        for i in 0..nc {
            let lap: f64 = (0..n).map(|j| hess[(i * n + j) * n + j]).sum();
            let s = if t == 0.0 { 0.0 } else { cubic[i] / ((mu + t) * t) };
            f.set(i, k, -w * (lap + (p - 2.0) * s));
        }
    }
    Ok(f)
}

/// `Σ (μ+|∇_h u|)^{p−2}∇_h u·∇_h φ·vol − Σ f·φ·vol`.
pub fn weak_functional(u: &VectorField, f: &VectorField, phi: &VectorField, p: f64, mu: f64) -> Result<f64> {
    check_inputs(u, f, p, mu)?;
    u.same_shape(phi)?;
    let ops = CellStencil::new(u.grid());
    let g = gradient_with(&ops, u, f, p, mu);
    Ok(inner(&ops, &g, &enforce_dirichlet(phi)) * ops.grid.cell_volume())
}

/// Max of `|weak_functional|` over `test_count` random conforming test fields
/// with unit interior `L²` norm.
pub fn weak_residual(
    u: &VectorField,
    f: &VectorField,
    p: f64,
    mu: f64,
    test_count: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(u, f, p, mu)?;
    if test_count == 0 {
        return Err(invalid("test_count", "must be ≥ 1"));
    }
    let ops = CellStencil::new(u.grid());
    let g = gradient_with(&ops, u, f, p, mu);
    let vol = ops.grid.cell_volume();
    let nc = u.components();
    let mut worst = 0.0f64;
    for k in 0..test_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut phi = VectorField::zeros(&ops.grid, nc);
        for c in 0..nc {
            for &node in &ops.interior {
                phi.set(c, node, StandardNormal.sample(&mut rng));
            }
        }
        let norm = field_l2(&ops, &phi);
        if norm == 0.0 {
            continue;
        }
        worst = worst.max((inner(&ops, &g, &phi) * vol / norm).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::laplacian;
    use crate::grid::{scalar_field, unit_grid};
    use crate::linear_elliptic::solve_poisson;
    use rand::Rng;
    use std::f64::consts::PI;

    fn bubble(grid: &Grid) -> VectorField {
        scalar_field(grid, |x| (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    fn random_conforming(grid: &Grid, nc: usize, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        enforce_dirichlet(&field_from_fn(grid, nc, |_, o| {
            o.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0))
        }))
    }

    #[test]
    fn psi_collapses_at_p_two() {
        for &mu in &[0.0, 0.3, 2.0] {
            for &t in &[0.0, 1e-3, 0.7, 12.0] {
                assert!((psi(t, 2.0, mu) - 0.5 * t * t).abs() <= 1e-13 * (1.0 + t * t));
            }
        }
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = rng.random_range(1.05..2.0);
            let mu = if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(1e-3..2.0)
            };
            let t = rng.random_range(0.01..5.0);
            let eps = 1e-5 * t;
            let fd = (psi_direct(t + eps, p, mu) - psi_direct(t - eps, p, mu)) / (2.0 * eps);
            let exact = psi_prime(t, p, mu);
            assert!((fd - exact).abs() <= 1e-6 * exact, "p={p} mu={mu} t={t}");
        }
    }

    #[test]
    fn stable_psi_difference_agrees_with_direct() {
        for &(t0, t1, p, mu) in &[
            (0.5, 0.51, 1.5, 0.1),
            (0.0, 1e-4, 1.3, 0.01),
            (2.0, 1.0, 1.8, 0.0),
        ] {
            let d = psi_diff(t0, t1, t1 - t0, p, mu);
            let direct = psi_direct(t1, p, mu) - psi_direct(t0, p, mu);
            assert!((d - direct).abs() <= 1e-9 * direct.abs(), "{d} {direct}");
        }
        assert!(psi(1e-9, 1.5, 0.1) > 0.0);
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let g = unit_grid(2, 9).unwrap();
        let f = bubble(&g).scaled(3.0);
        assert_eq!(energy(&VectorField::zeros(&g, 1), &f, 1.5, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn p_two_gradient_is_five_point_laplacian() {
        let g = unit_grid(2, 17).unwrap();
        let u = random_conforming(&g, 2, 4);
        let f = random_conforming(&g, 2, 5);
        let grad = energy_gradient(&u, &f, 2.0, 0.4).unwrap();
        let lap = laplacian(&u);
        for k in g.interior_nodes() {
            for c in 0..2 {
                let expect = -lap.get(c, k) - f.get(c, k);
                assert!((grad.get(c, k) - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }
        assert!(grad.is_dirichlet_conforming());
    }

    #[test]
    fn gradient_of_zero_is_minus_f() {
        let g = unit_grid(3, 6).unwrap();
        let f = random_conforming(&g, 2, 9);
        let grad = energy_gradient(&VectorField::zeros(&g, 2), &f, 1.4, 0.2).unwrap();
        assert_eq!(grad, f.scaled(-1.0));
    }

    fn fd_error(u: &VectorField, w: &VectorField, f: &VectorField, p: f64, mu: f64, eps: f64) -> f64 {
        let up = u.combine(1.0, w, eps).unwrap();
        let um = u.combine(1.0, w, -eps).unwrap();
        let fd = (energy(&up, f, p, mu).unwrap() - energy(&um, f, p, mu).unwrap()) / (2.0 * eps);
        let g = energy_gradient(u, f, p, mu).unwrap();
        let exact: f64 =
            g.values().iter().zip(w.values()).map(|(a, b)| a * b).sum::<f64>() * u.grid().cell_volume();
        (fd - exact).abs()
    }

    #[test]
    fn gradient_matches_energy_differences() {
        let g = unit_grid(2, 9).unwrap();
        for case in 0..5u64 {
            let u = random_conforming(&g, 2, 10 + case);
            let w = random_conforming(&g, 2, 20 + case);
            let f = random_conforming(&g, 2, 30 + case);
            let (p, mu) = (1.2 + 0.15 * case as f64, 0.05 + 0.2 * case as f64);
            let e1 = fd_error(&u, &w, &f, p, mu, 1e-2);
            let e2 = fd_error(&u, &w, &f, p, mu, 5e-3);
            let order = (e1 / e2).log2();
            assert!(order >= 1.9, "case {case}: order {order}");
        }
    }

    #[test]
    fn p_two_minimizer_matches_poisson() {
        let g = unit_grid(2, 33).unwrap();
        let f = bubble(&g).scaled(2.0 * PI * PI);
        let tol = 1e-10;
        let (u, rep) = minimize(&f, 2.0, 0.3, tol, 100).unwrap();
        assert!(rep.converged);
        let (pu, _) = solve_poisson(&g, &f, 1e-13).unwrap();
        assert!(u.sub(&pu).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn zero_data_minimizer_is_zero() {
        let g = unit_grid(2, 9).unwrap();
        let (u, rep) = minimize(&VectorField::zeros(&g, 2), 1.5, 0.0, 1e-10, 10).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn energy_decreases_monotonically() {
        let g = unit_grid(2, 17).unwrap();
        let f = scalar_field(&g, |x| 10.0 * (x[0] - 0.4).abs() + 2.0 * x[1]);
        for &(p, mu) in &[(1.5, 0.0), (1.3, 0.01), (1.9, 0.5)] {
            let (_, rep) = minimize(&f, p, mu, 1e-9, 500).unwrap();
            assert!(rep.converged, "p={p} mu={mu} {:?}", rep.gradient_norm);
            assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
            assert!(rep.history.last() < rep.history.first());
        }
    }

    #[test]
    fn homogeneity_at_zero_mu() {
        let g = unit_grid(2, 17).unwrap();
        let f = scalar_field(&g, |x| 1.0 + x[0] * x[1]);
        let p = 1.5;
        let tol = 1e-10;
        let (u1, r1) = minimize(&f, p, 0.0, tol, 500).unwrap();
        for &lambda in &[2.0f64, 8.0] {
            let (ul, rl) = minimize(&f.scaled(lambda), p, 0.0, tol, 500).unwrap();
            assert!(r1.converged && rl.converged);
            let scale = lambda.powf(1.0 / (p - 1.0));
            let rel = ul.sub(&u1.scaled(scale)).unwrap().max_abs() / ul.max_abs();
            assert!(rel < 1e-8, "λ={lambda}: {rel}");
        }
    }

    #[test]
    fn random_starts_reach_the_same_minimizer() {
        let g = unit_grid(2, 17).unwrap();
        let f = scalar_field(&g, |x| 5.0 * (3.0 * x[0]).cos() + 1.0);
        let tol = 1e-10;
        let (a, ra) =
            minimize_from(&random_conforming(&g, 1, 1).scaled(3.0), &f, 1.6, 0.1, tol, 500).unwrap();
        let (b, rb) = minimize_from(&random_conforming(&g, 1, 2), &f, 1.6, 0.1, tol, 500).unwrap();
        assert!(ra.converged && rb.converged);
        assert!(a.sub(&b).unwrap().max_abs() <= 10.0 * tol * f.max_abs());
    }

    #[test]
    fn manufactured_data_reproduces_solution() {
        let g = unit_grid(2, 17).unwrap();
        let shape = |x: &[f64], o: &mut [f64]| {
            let s = (PI * x[0]).sin() * (PI * x[1]).sin();
            o[0] = s;
            o[1] = -s;
        };
        let (u, f) = manufactured_problem(shape, 2, 1.7, 0.1, &g, Discretization::Variational).unwrap();
        let (v, rep) = minimize(&f, 1.7, 0.1, 1e-11, 500).unwrap();
        assert!(rep.converged);
        assert!(v.sub(&u).unwrap().max_abs() < 1e-8);
        let sym = v
            .component(0)
            .iter()
            .zip(v.component(1))
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        assert!(sym < 1e-9);

        let (_, fp2) = manufactured_problem(shape, 2, 2.0, 0.1, &g, Discretization::Nondivergence).unwrap();
        let (_, fv2) = manufactured_problem(shape, 2, 2.0, 0.1, &g, Discretization::Variational).unwrap();
        assert!(fp2.sub(&fv2).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn manufactured_problem_rejections() {
        let g = unit_grid(2, 9).unwrap();
        let bump = |x: &[f64], o: &mut [f64]| o[0] = (PI * x[0]).sin() * (PI * x[1]).sin();
        assert!(manufactured_problem(bump, 1, 1.5, 0.0, &g, Discretization::Nondivergence).is_err());
        assert!(manufactured_problem(bump, 1, 1.5, 0.0, &g, Discretization::Variational).is_ok());
        let off = |x: &[f64], o: &mut [f64]| o[0] = 1.0 + x[0];
        assert!(manufactured_problem(off, 1, 1.5, 0.1, &g, Discretization::Variational).is_err());
    }

    #[test]
    fn sine_bubble_derivatives_match_differences() {
        let g = unit_grid(3, 5).unwrap();
        let sol = SineBubble {
            amplitudes: vec![1.5, -0.5],
            modes: vec![1, 2, 1],
            extents: vec![1.0; 3],
        };
        let x = [0.31, 0.47, 0.62];
        let mut gr = vec![0.0; 6];
        let mut he = vec![0.0; 18];
        sol.gradient(&x, &mut gr);
        sol.hessian(&x, &mut he);
        let eps = 1e-5;
        let mut vp = [0.0; 2];
        let mut vm = [0.0; 2];
        let mut gp = vec![0.0; 6];
        let mut gm = vec![0.0; 6];
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            sol.value(&xp, &mut vp);
            sol.value(&xm, &mut vm);
            sol.gradient(&xp, &mut gp);
            sol.gradient(&xm, &mut gm);
            for i in 0..2 {
                assert!(((vp[i] - vm[i]) / (2.0 * eps) - gr[i * 3 + j]).abs() < 1e-8);
                for l in 0..3 {
                    let fd = (gp[i * 3 + l] - gm[i * 3 + l]) / (2.0 * eps);
                    assert!((fd - he[(i * 3 + l) * 3 + j]).abs() < 1e-7);
                }
            }
        }
        assert_eq!(sol.components(), 2);
        let _ = g;
    }

    #[test]
    fn analytic_rhs_matches_discrete_data_under_refinement() {
        let err = |m: usize| {
            let g = unit_grid(2, m).unwrap();
            let sol = SineBubble::lowest(&g, &[1.0]);
            let fc = analytic_rhs(&sol, 1.7, 0.1, &g).unwrap();
            let (_, fv) = manufactured_problem(
                |x, o| sol.value(x, o),
                1,
                1.7,
                0.1,
                &g,
                Discretization::Nondivergence,
            )
            .unwrap();
            fc.sub(&fv).unwrap().max_abs()
        };
        let ratio = err(17) / err(33);
        assert!(ratio > 3.0, "ratio {ratio}");
    }

    #[test]
    fn weak_residual_cases() {
        let g = unit_grid(2, 17).unwrap();
        let zero = VectorField::zeros(&g, 1);
        assert_eq!(weak_residual(&zero, &zero, 1.5, 0.0, 8, 1).unwrap(), 0.0);
        assert!(weak_residual(&zero, &zero, 1.5, 0.0, 0, 1).is_err());

        let f = bubble(&g).scaled(4.0);
        let tol = 1e-9;
        let (u, rep) = minimize(&f, 1.6, 0.05, tol, 500).unwrap();
        assert!(rep.converged);
        assert!(weak_residual(&u, &f, 1.6, 0.05, 16, 3).unwrap() <= 10.0 * tol);

        // nodal basis field recovers the gradient entry
        let grad = energy_gradient(&u.scaled(1.1), &f, 1.6, 0.05).unwrap();
        let node = g.interior_nodes()[37];
        let mut e = VectorField::zeros(&g, 1);
        e.set(0, node, 1.0);
        let w = weak_functional(&u.scaled(1.1), &f, &e, 1.6, 0.05).unwrap();
        assert!((w - grad.get(0, node) * g.cell_volume()).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn integration_by_parts_is_exact(seed in 0u64..10_000, p in 1.05f64..2.0, mu in 0.0f64..1.0) {
                let g = unit_grid(2, 7).unwrap();
                let u = random_conforming(&g, 2, seed);
                let phi = random_conforming(&g, 2, seed + 1);
                let zero = VectorField::zeros(&g, 2);
                // Σ a Gu·Gφ over cells equals ⟨Gᵀ(a Gu), φ⟩
                let ops = CellStencil::new(&g);
                let gu = ops.gradients(&u);
                let gp = ops.gradients(&phi);
                let t = ops.magnitudes(&gu, 4);
                let direct: f64 = (0..ops.len()).map(|e| {
                    let a = if t[e] == 0.0 { 0.0 } else { psi_prime(t[e], p, mu) / t[e] };
                    (0..4).map(|k| a * gu[e * 4 + k] * gp[e * 4 + k]).sum::<f64>()
                }).sum::<f64>() * ops.weight * g.cell_volume();
                let dual = weak_functional(&u, &zero, &phi, p, mu).unwrap();
                prop_assert!((direct - dual).abs() <= 1e-11 * direct.abs().max(1.0));
            }

            #[test]
            fn energy_is_convex_along_lines(seed in 0u64..10_000, p in 1.05f64..2.0, mu in 0.0f64..1.0, s in 0.0f64..1.0) {
                let g = unit_grid(2, 7).unwrap();
                let a = random_conforming(&g, 1, seed);
                let b = random_conforming(&g, 1, seed + 7);
                let f = random_conforming(&g, 1, seed + 13);
                let mid = a.combine(1.0 - s, &b, s).unwrap();
                let lhs = energy(&mid, &f, p, mu).unwrap();
                let rhs = (1.0 - s) * energy(&a, &f, p, mu).unwrap() + s * energy(&b, &f, p, mu).unwrap();
                prop_assert!(lhs <= rhs + 1e-12 * rhs.abs().max(1.0));
            }
        }
    }
}
