//! Randomized sweeps over the pointwise inequalities behind the estimates.
//!
//! Margins are `(rhs − lhs) / max(|lhs|, |rhs|)`, zero when both sides vanish.
//! A sample violates when its margin is below `−1e−12`. Sample `k` draws from
//! its own ChaCha stream, so sweeps are deterministic and prefix-stable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calculus::cubic_at;
use crate::error::{invalid, Error, Result};
use crate::grid::MAX_DIMS;
use crate::nonlinear_solver::check_p;

pub const RELATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalitySweep {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Smallest margin seen.
    pub worst_slack: f64,
    /// Largest observed `lhs/rhs`, or the constant being estimated.
    pub empirical_constant: Option<f64>,
    pub seed: u64,
    /// Per-μ suprema, for sweeps that estimate a μ-uniform constant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_mu: Vec<(f64, f64)>,
}

impl InequalitySweep {
    fn new(name: impl Into<String>, seed: u64) -> Self {
        InequalitySweep {
            name: name.into(),
            samples: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            empirical_constant: None,
            seed,
            by_mu: Vec::new(),
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64) {
        let m = margin(lhs, rhs);
        self.worst_slack = self.worst_slack.min(m);
        if m < -RELATIVE_SLACK {
            self.violations += 1;
        }
    }

    fn observe_ratio(&mut self, r: f64) {
        if r.is_finite() {
            self.empirical_constant = Some(self.empirical_constant.map_or(r, |c| c.max(r)));
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Scale-free margin of `lhs ≤ rhs`.
pub fn margin(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (rhs - lhs) / scale
    }
}

fn stream(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Standard normal or, with probability 0.3, a Cauchy draw clipped to `±10³`.
fn entry(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.3) {
        let u: f64 = rng.random_range(-0.5..0.5);
        (std::f64::consts::PI * u).tan().clamp(-1e3, 1e3)
    } else {
        StandardNormal.sample(rng)
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|I| ≤ |∇v|²|D²v||Δv|` with `I = Σ_i (∇v·∇∇v·∇v)_i Δv_i`, and the
/// intermediate `|b|² ≤ |Δv|²|∇v|²` with `b_j = Σ_i ∂_j v_i Δv_i`.
///
/// The empirical constant is the largest `|I| / (|∇v|²|D²v||Δv|)`.
pub fn check_appendix(samples: usize, seed: u64, components: usize, dims: usize) -> Result<InequalitySweep> {
    check_samples(samples)?;
    if !(1..=MAX_DIMS).contains(&dims) || components == 0 {
        return Err(invalid("dims", format!("need N ≥ 1 and 1 ≤ n ≤ {MAX_DIMS}")));
    }
    let (nc, n) = (components, dims);
    let mut sweep = InequalitySweep::new("appendix", seed);
    let mut grad = vec![0.0; nc * n];
    let mut hess = vec![0.0; nc * n * n];
    let mut cubic = vec![0.0; nc];
    let mut lap = vec![0.0; nc];
    for k in 0..samples {
        let mut rng = stream(seed, k);
        let gs = if rng.random_bool(0.05) {
            0.0
        } else {
            log_uniform(&mut rng, 1e-4, 1e4)
        };
        let hs = log_uniform(&mut rng, 1e-4, 1e4);
        grad.iter_mut().for_each(|g| *g = gs * entry(&mut rng));
        for i in 0..nc {
            for j in 0..n {
                for l in j..n {
                    let v = hs * entry(&mut rng);
                    hess[(i * n + j) * n + l] = v;
                    hess[(i * n + l) * n + j] = v;
                }
            }
        }
        appendix_sample(&grad, &hess, nc, n, &mut cubic, &mut lap, &mut sweep);
        sweep.samples += 1;
    }
    Ok(sweep)
}

fn appendix_sample(
    grad: &[f64],
    hess: &[f64],
    nc: usize,
    n: usize,
    cubic: &mut [f64],
    lap: &mut [f64],
    sweep: &mut InequalitySweep,
) {
    cubic_at(grad, hess, nc, n, cubic);
    for (i, l) in lap.iter_mut().enumerate() {
        *l = (0..n).map(|j| hess[(i * n + j) * n + j]).sum();
    }
    let i_val: f64 = cubic.iter().zip(lap.iter()).map(|(c, l)| c * l).sum();
    let (gn, hn, ln) = (norm(grad), norm(hess), norm(lap));
    let rhs = gn * gn * hn * ln;
    sweep.record(i_val.abs(), rhs);
    if rhs > 0.0 {
        sweep.observe_ratio(i_val.abs() / rhs);
    }
    let b_sq: f64 = (0..n)
        .map(|j| (0..nc).map(|i| grad[i * n + j] * lap[i]).sum::<f64>().powi(2))
        .sum();
    sweep.record(b_sq, ln * ln * gn * gn);
}

/// `(μ+s)^e − (μ+t)^e` given `d = s − t` computed without cancellation.
fn pow_diff(s: f64, t: f64, d: f64, mu: f64, e: f64) -> f64 {
    if mu + t == 0.0 {
        return 0.0;
    }
    let x = d / (mu + t);
    if x.abs() < 0.5 {
        (mu + t).powf(e) * (e * x.ln_1p()).exp_m1()
    } else {
        (mu + s).powf(e) - (mu + t).powf(e)
    }
}

/// `Φ_μ(A) − Φ_μ(B)` with `Φ_μ(A) = (μ+|A|)^{p−2}A`, evaluated as
/// `c_A(A−B) + (c_A − c_B)B` with the coefficient difference from `expm1`.
fn flux_difference(a: &[f64], b: &[f64], p: f64, mu: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let ca = (mu + na).powf(p - 2.0);
    let cb = (mu + nb).powf(p - 2.0);
    let dnorm = if na + nb == 0.0 {
        0.0
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x + y)).sum::<f64>() / (na + nb)
    };
    let dc = pow_diff(na, nb, dnorm, mu, p - 2.0);
    for k in 0..a.len() {
        let ca_term = if na == 0.0 && mu == 0.0 {
            0.0
        } else {
            ca * (a[k] - b[k])
        };
        let dc_term = if nb == 0.0 { 0.0 } else { dc * b[k] };
        out[k] = ca_term + dc_term;
    }
    if na == 0.0 && mu == 0.0 {
        // Φ(0) = 0
        for k in 0..a.len() {
            out[k] = -cb * b[k];
        }
    }
}

/// Lipschitz ratio `|Φ_μ(A) − Φ_μ(B)| (μ+|A|+|B|)^{2−p} / |A−B|`.
pub fn tensor_lipschitz_ratio(a: &[f64], b: &[f64], p: f64, mu: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dn = norm(&diff);
    if dn == 0.0 {
        return 0.0;
    }
    let mut out = vec![0.0; a.len()];
    flux_difference(a, b, p, mu, &mut out);
    norm(&out) * (mu + norm(a) + norm(b)).powf(2.0 - p) / dn
}

/// Per-μ suprema of [`tensor_lipschitz_ratio`] over random `A, B ∈ ℝ^{N×n}`.
///
/// Every μ sees the same pairs. A μ whose supremum exceeds twice the smallest
/// one counts as a violation; `empirical_constant` is the largest supremum.
pub fn check_tensor_lipschitz(
    samples: usize,
    seed: u64,
    p: f64,
    mu_list: &[f64],
    components: usize,
    dims: usize,
) -> Result<InequalitySweep> {
    check_samples(samples)?;
    check_p(p)?;
    if mu_list.is_empty() || mu_list.iter().any(|&m| !(m >= 0.0) || m.is_infinite()) {
        return Err(invalid("mu_list", "need a non-empty list of finite μ ≥ 0"));
    }
    let len = components * dims;
    let mut sup = vec![0.0f64; mu_list.len()];
    let mut a = vec![0.0; len];
    let mut b = vec![0.0; len];
    for k in 0..samples {
        let mut rng = stream(seed, k);
        tensor_pair(&mut rng, &mut a, &mut b);
        for (s, &mu) in sup.iter_mut().zip(mu_list) {
            let r = tensor_lipschitz_ratio(&a, &b, p, mu);
            if r.is_finite() {
                *s = s.max(r);
            }
        }
    }
    let mut sweep = InequalitySweep::new(format!("tensor_lipschitz_p{p}"), seed);
    sweep.samples = samples * mu_list.len();
    let lo = sup.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sup.iter().copied().fold(0.0, f64::max);
    for &s in &sup {
        sweep.record(s, 2.0 * lo);
    }
    sweep.empirical_constant = Some(hi);
    sweep.by_mu = mu_list.iter().copied().zip(sup).collect();
    Ok(sweep)
}

/// Random pair mixing independent draws, near-coincident pairs, equal-norm
/// pairs and one zero argument.
fn tensor_pair(rng: &mut ChaCha8Rng, a: &mut [f64], b: &mut [f64]) {
    let s = log_uniform(rng, 1e-3, 1e3);
    a.iter_mut().for_each(|x| *x = s * entry(rng));
    match rng.random_range(0..4) {
        0 => b
            .iter_mut()
            .for_each(|x| *x = s * log_uniform(rng, 1e-3, 1e3) * entry(rng)),
        1 => {
            let eps = log_uniform(rng, 1e-8, 1.0) * s;
            for (y, x) in b.iter_mut().zip(a.iter()) {
                *y = x + eps * entry(rng);
            }
        }
        2 => {
            // same norm, different direction
            b.iter_mut().for_each(|x| *x = entry(rng));
            let (na, nb) = (norm(a), norm(b));
            if nb > 0.0 {
                b.iter_mut().for_each(|x| *x *= na / nb);
            }
        }
        _ => b.iter_mut().for_each(|x| *x = 0.0),
    }
}

/// `x^{2−p} y ≤ x + y^{1/(p−1)}` for `x, y` log-uniform in `[10⁻⁶, 10⁶]`.
pub fn check_young_type(samples: usize, seed: u64, p: f64) -> Result<InequalitySweep> {
    check_samples(samples)?;
    check_p(p)?;
    let mut sweep = InequalitySweep::new(format!("young_type_p{p}"), seed);
    for k in 0..samples {
        let mut rng = stream(seed, k);
        let x = log_uniform(&mut rng, 1e-6, 1e6);
        let y = log_uniform(&mut rng, 1e-6, 1e6);
        young_sample(x, y, p, &mut sweep);
        sweep.samples += 1;
    }
    Ok(sweep)
}

fn young_sample(x: f64, y: f64, p: f64, sweep: &mut InequalitySweep) {
    let lhs = x.powf(2.0 - p) * y;
    let rhs = x + y.powf(1.0 / (p - 1.0));
    sweep.record(lhs, rhs);
    sweep.observe_ratio(lhs / rhs);
}

fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let s = if rng.random_bool(0.05) {
        0.0
    } else {
        log_uniform(rng, 1e-4, 1e4)
    };
    (0..len).map(|_| s * entry(rng)).collect()
}

/// `(μ+|a|)^{2−p} ≤ 1 + |a|^{2−p}`; needs `μ ≤ 1`.
pub fn check_mu_unit_bound(samples: usize, seed: u64, p: f64, mu: f64) -> Result<InequalitySweep> {
    check_samples(samples)?;
    check_p(p)?;
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(
            "mu",
            format!("the bound (μ+t)^(2−p) ≤ 1 + t^(2−p) needs 0 ≤ μ ≤ 1, got {mu}"),
        ));
    }
    let mut sweep = InequalitySweep::new(format!("mu_unit_bound_p{p}_mu{mu}"), seed);
    for k in 0..samples {
        let mut rng = stream(seed, k);
        let t = norm(&random_vector(&mut rng, 6));
        let lhs = (mu + t).powf(2.0 - p);
        let rhs = 1.0 + t.powf(2.0 - p);
        sweep.record(lhs, rhs);
        sweep.observe_ratio(lhs / rhs);
        sweep.samples += 1;
    }
    Ok(sweep)
}

/// `|(μ+|a|)^{2−p} − (μ+|b|)^{2−p}| ≤ (2−p) μ^{1−p} |a−b|`; needs `μ > 0`.
pub fn check_mu_lipschitz(samples: usize, seed: u64, p: f64, mu: f64) -> Result<InequalitySweep> {
    check_samples(samples)?;
    check_p(p)?;
    if !(mu > 0.0) || mu.is_infinite() {
        return Err(invalid(
            "mu",
            format!("the μ-Lipschitz bound needs μ > 0, got {mu}"),
        ));
    }
    let mut sweep = InequalitySweep::new(format!("mu_lipschitz_p{p}_mu{mu}"), seed);
    for k in 0..samples {
        let mut rng = stream(seed, k);
        let a = random_vector(&mut rng, 6);
        let b: Vec<f64> = if rng.random_bool(0.3) {
            let eps = log_uniform(&mut rng, 1e-8, 1.0);
            a.iter().map(|x| x + eps * entry(&mut rng)).collect()
        } else {
            random_vector(&mut rng, 6)
        };
        let (na, nb) = (norm(&a), norm(&b));
        let dnorm = if na + nb == 0.0 {
            0.0
        } else {
            a.iter().zip(&b).map(|(x, y)| (x - y) * (x + y)).sum::<f64>() / (na + nb)
        };
        let lhs = pow_diff(na, nb, dnorm, mu, 2.0 - p).abs();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let rhs = (2.0 - p) * mu.powf(1.0 - p) * norm(&diff);
        sweep.record(lhs, rhs);
        if rhs > 0.0 {
            sweep.observe_ratio(lhs / rhs);
        }
        sweep.samples += 1;
    }
    Ok(sweep)
}

/// Both μ bounds; rejects `μ > 1` and `μ = 0`.
pub fn check_mu_bounds(samples: usize, seed: u64, p: f64, mu: f64) -> Result<[InequalitySweep; 2]> {
    Ok([
        check_mu_unit_bound(samples, seed, p, mu)?,
        check_mu_lipschitz(samples, seed, p, mu)?,
    ])
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        Err(invalid("samples", "must be ≥ 1"))
    } else {
        Ok(())
    }
}

/// Aggregate CSV: `name, samples, violations, worst_slack, empirical_constant`.
pub fn sweeps_to_csv(sweeps: &[InequalitySweep]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name",
        "samples",
        "violations",
        "worst_slack",
        "empirical_constant",
    ])?;
    for s in sweeps {
        w.write_record([
            s.name.clone(),
            s.samples.to_string(),
            s.violations.to_string(),
            format!("{:e}", s.worst_slack),
            s.empirical_constant.map_or(String::new(), |c| format!("{c:e}")),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
