//! Dirichlet Poisson solves and empirical elliptic-regularity constants.

mod constants;

pub use constants::{
    estimate_c1, estimate_c2, estimate_c3, estimate_constants, sobolev_target, ConstantsReport, QTable,
    SampleFamily, SamplePlan, SobolevTarget, DEGENERATE_LAPLACIAN,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{check_positive, Grid, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolveReport {
    pub iterations: usize,
    /// Discrete interior `L²` norm of `−Δ_h u − g`, all components together.
    pub residual: f64,
    pub converged: bool,
}

/// Applies `−Δ_h` at interior nodes of one component; boundary output is zero.
pub fn apply_neg_laplacian(grid: &Grid, interior: &[usize], u: &[f64], out: &mut [f64]) {
    let n = grid.n_dims();
    let mut coef = [0.0; crate::grid::MAX_DIMS];
    let mut stride = [0usize; crate::grid::MAX_DIMS];
    for a in 0..n {
        coef[a] = 1.0 / (grid.spacing()[a] * grid.spacing()[a]);
        stride[a] = grid.stride(a);
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for &node in interior {
        let mut s = 0.0;
        for a in 0..n {
            s += coef[a] * (2.0 * u[node] - u[node + stride[a]] - u[node - stride[a]]);
        }
        out[node] = s;
    }
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Matrix-free conjugate gradients for an SPD operator on interior nodes.
///
/// Vectors are full nodal arrays whose boundary entries stay zero; `apply`
/// must preserve that. Norms carry the cell-volume weight `vol`.
pub fn conjugate_gradient<A>(
    mut apply: A,
    interior: &[usize],
    vol: f64,
    b: &[f64],
    x: &mut [f64],
    tol_abs: f64,
    max_iters: usize,
) -> CgOutcome
where
    A: FnMut(&[f64], &mut [f64]),
{
    let len = b.len();
    let dot = |p: &[f64], q: &[f64]| -> f64 { interior.iter().map(|&i| p[i] * q[i]).sum() };
    let mut ap = vec![0.0; len];
    let mut r = vec![0.0; len];
    let target = tol_abs * tol_abs / vol;
    let mut iterations = 0;
    let mut restarts = 0;
    loop {
        // restart from the true residual; recurrences drift near roundoff
        apply(x, &mut ap);
        for &i in interior {
            r[i] = b[i] - ap[i];
        }
        let mut rr = dot(&r, &r);
        if rr <= target || iterations >= max_iters || restarts == 4 {
            let residual = (rr * vol).sqrt();
            return CgOutcome {
                iterations,
                residual,
                converged: residual <= tol_abs,
            };
        }
        restarts += 1;
        let mut p = r.clone();
        while rr > target && iterations < max_iters {
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for &i in interior {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for &i in interior {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
            iterations += 1;
        }
    }
}

pub(crate) fn interior_l2(grid: &Grid, interior: &[usize], v: &[f64]) -> f64 {
    (interior.iter().map(|&i| v[i] * v[i]).sum::<f64>() * grid.cell_volume()).sqrt()
}

/// Solves `−Δ_h u = g` in the interior with `u = 0` on the boundary, one
/// component at a time, by conjugate gradients.
///
/// Converged means `‖−Δ_h u − g‖₂ ≤ tol·max(1, ‖g‖₂)`, both over the interior.
/// Hitting the iteration cap returns `converged = false` rather than an error.
pub fn solve_poisson(grid: &Grid, g: &VectorField, tol: f64) -> Result<(VectorField, PoissonSolveReport)> {
    check_positive("tol", tol)?;
    let interior = grid.interior_nodes();
    let nc = g.components();
    let g_norm = (0..nc)
        .map(|c| interior_l2(grid, &interior, g.component(c)).powi(2))
        .sum::<f64>()
        .sqrt();
    let target = tol * g_norm.max(1.0);
    let per_component = target / (nc as f64).sqrt();
    let max_iters = (4 * interior.len()).max(1000);
    let mut u = VectorField::zeros(grid, nc);
    let mut iterations = 0;
    let mut residual_sq = 0.0;
    let mut rhs = vec![0.0; grid.node_count()];
    for c in 0..nc {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for &i in &interior {
            rhs[i] = g.component(c)[i];
        }
        let out = conjugate_gradient(
            |x, y| apply_neg_laplacian(grid, &interior, x, y),
            &interior,
            grid.cell_volume(),
            &rhs,
            u.component_mut(c),
            per_component,
            max_iters,
        );
        iterations = iterations.max(out.iterations);
        residual_sq += out.residual * out.residual;
    }
    let residual = residual_sq.sqrt();
    Ok((
        u,
        PoissonSolveReport {
            iterations,
            residual,
            converged: residual <= target,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::laplacian;
    use crate::grid::{field_from_fn, scalar_field, unit_grid};
    use std::f64::consts::PI;

    fn sine_rhs(grid: &Grid) -> VectorField {
        scalar_field(grid, |x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    fn max_error(m: usize) -> f64 {
        let g = unit_grid(2, m).unwrap();
        let (u, rep) = solve_poisson(&g, &sine_rhs(&g), 1e-12).unwrap();
        assert!(rep.converged);
        (0..g.node_count())
            .map(|n| {
                let x = g.position(n);
                (u.get(0, n) - (PI * x[0]).sin() * (PI * x[1]).sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_sine_converges_at_second_order() {
        let (e33, e65) = (max_error(33), max_error(65));
        assert!(e65 < 1e-3);
        let ratio = e33 / e65;
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = unit_grid(2, 17).unwrap();
        let (u, rep) = solve_poisson(&g, &VectorField::zeros(&g, 2), 1e-10).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn superposition_and_roundtrip() {
        let g = unit_grid(3, 9).unwrap();
        let g1 = field_from_fn(&g, 2, |x, o| {
            o[0] = x[0] * x[1] + 1.0;
            o[1] = (3.0 * x[2]).cos();
        });
        let g2 = field_from_fn(&g, 2, |x, o| {
            o[0] = -(x[2] * 5.0).sin();
            o[1] = x[0] - x[1];
        });
        let tol = 1e-11;
        let (u1, _) = solve_poisson(&g, &g1, tol).unwrap();
        let (u2, _) = solve_poisson(&g, &g2, tol).unwrap();
        let (u12, rep) = solve_poisson(&g, &g1.combine(1.0, &g2, 1.0).unwrap(), tol).unwrap();
        assert!(rep.converged && u12.is_dirichlet_conforming());
        let diff = u12.sub(&u1.combine(1.0, &u2, 1.0).unwrap()).unwrap();
        assert!(diff.max_abs() < 1e-9);

        // −Δ_h u recovers g on the interior
        let lap = laplacian(&u1);
        for n in g.interior_nodes() {
            for c in 0..2 {
                assert!((-lap.get(c, n) - g1.get(c, n)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn maximum_principle_spot_check() {
        let g = unit_grid(2, 21).unwrap();
        let rhs = scalar_field(&g, |x| (x[0] - 0.3).abs() * (1.0 + x[1]));
        let tol = 1e-10;
        let (u, _) = solve_poisson(&g, &rhs, tol).unwrap();
        assert!(u.values().iter().all(|&v| v >= -tol));
    }

    #[test]
    fn capped_iterations_report_not_converged() {
        let g = unit_grid(2, 33).unwrap();
        let interior = g.interior_nodes();
        let rhs = sine_rhs(&g);
        let mut x = vec![0.0; g.node_count()];
        let out = conjugate_gradient(
            |a, b| apply_neg_laplacian(&g, &interior, a, b),
            &interior,
            g.cell_volume(),
            rhs.component(0),
            &mut x,
            1e-14,
            3,
        );
        assert_eq!(out.iterations, 3);
        assert!(!out.converged);
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let g = unit_grid(2, 5).unwrap();
        assert!(solve_poisson(&g, &VectorField::zeros(&g, 1), 0.0).is_err());
    }
}
