//! Empirical estimates of the constants in
//! `‖D²v‖₂ ≤ C₁‖Δv‖₂`, `‖D²v‖_q ≤ C₂(q)‖Δv‖_q` and
//! `‖∇v‖_{q*} ≤ C₃(q)‖Δv‖_q` (or `‖∇v‖_∞` above the dimension).
//!
//! Each estimate is a maximum of discrete ratios over random
//! Dirichlet-conforming sine sums refined by coordinate ascent, so it is a
//! lower bound for the discrete constant.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::calculus::jet;
use crate::error::{invalid, Error, Result};
use crate::grid::{field_from_fn, Grid};

/// Samples whose `‖Δv‖_q` falls below this are skipped.
pub const DEGENERATE_LAPLACIAN: f64 = 1e-12;

const MAX_MODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub samples: usize,
    pub ascent_steps: usize,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            samples: 48,
            ascent_steps: 12,
            seed: 2024,
        }
    }
}

/// Norm targeted by the Sobolev-embedding constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SobolevTarget {
    /// `‖∇v‖_{q*}` with `q* = nq/(n−q)`, for `q < n`.
    Finite(f64),
    /// `‖∇v‖_∞`, for `q > n`.
    Sup,
}

pub fn sobolev_target(q: f64, n: usize) -> Result<SobolevTarget> {
    let nf = n as f64;
    if q < 2.0 {
        return Err(invalid("q", format!("must be ≥ 2, got {q}")));
    }
    if q == nf {
        return Err(invalid("q", "q = n is excluded from the embedding estimate"));
    }
    Ok(if q < nf {
        SobolevTarget::Finite(nf * q / (nf - q))
    } else {
        SobolevTarget::Sup
    })
}

/// Ordered `q → value` table, serialized as a JSON object keyed by `q`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable(Vec<(f64, f64)>);

impl QTable {
    pub fn new() -> Self {
        QTable(Vec::new())
    }

    pub fn insert(&mut self, q: f64, v: f64) {
        match self.0.iter_mut().find(|(k, _)| *k == q) {
            Some(e) => e.1 = v,
            None => {
                self.0.push((q, v));
                self.0.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
    }

    pub fn get(&self, q: f64) -> Option<f64> {
        self.0.iter().find(|(k, _)| *k == q).map(|e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Serialize for QTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (q, v) in &self.0 {
            map.serialize_entry(&format!("{q}"), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for QTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        let mut t = QTable::new();
        for (k, v) in raw {
            let q = k.parse::<f64>().map_err(serde::de::Error::custom)?;
            t.insert(q, v);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2_of_q")]
    pub c2_of_q: QTable,
    #[serde(rename = "C3_of_q")]
    pub c3_of_q: QTable,
    /// `(min, max)` of `C₂(q)/q` over the tabulated `q`.
    #[serde(rename = "K_band")]
    pub k_band: (f64, f64),
    pub sample_count: usize,
    pub ascent_steps: usize,
    pub seed: u64,
    pub n_dims: usize,
    pub resolution: Vec<usize>,
    /// Caveats attached to the estimates, e.g. use of the `n = 2` extension.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl ConstantsReport {
    pub fn c2(&self, q: f64) -> Result<f64> {
        if q == 2.0 {
            return Ok(self.c1);
        }
        self.c2_of_q
            .get(q)
            .ok_or(Error::MissingConstant { name: "C2", q })
    }

    pub fn c3(&self, q: f64) -> Result<f64> {
        self.c3_of_q
            .get(q)
            .ok_or(Error::MissingConstant { name: "C3", q })
    }

    /// Report with hand-set constants, e.g. `C₁ = 1` on convex domains.
    pub fn fixed(n_dims: usize, c2: &[(f64, f64)], c3: &[(f64, f64)]) -> ConstantsReport {
        let mut c2t = QTable::new();
        c2.iter().for_each(|&(q, v)| c2t.insert(q, v));
        let mut c3t = QTable::new();
        c3.iter().for_each(|&(q, v)| c3t.insert(q, v));
        let c1 = c2t.get(2.0).unwrap_or(1.0);
        let k_band = k_band(&c2t);
        ConstantsReport {
            c1,
            c2_of_q: c2t,
            c3_of_q: c3t,
            k_band,
            sample_count: 0,
            ascent_steps: 0,
            seed: 0,
            n_dims,
            resolution: Vec::new(),
            flags: vec!["constants set by hand".into()],
        }
    }
}

fn k_band(c2: &QTable) -> (f64, f64) {
    let ratios: Vec<f64> = c2.iter().map(|(q, v)| v / q).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    if ratios.is_empty() {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Discrete derivatives of one sine mode at interior nodes.
struct ModeJet {
    grad: Vec<f64>,
    hess: Vec<f64>,
    lap: Vec<f64>,
}

/// Random sine sums `Σ a_k Π_j sin(m_kj π x_j / L_j)` with precomputed
/// per-mode discrete jets, so every ratio evaluation is a linear combination.
pub struct SampleFamily {
    grid: Grid,
    plan: SamplePlan,
    max_mode: Vec<usize>,
    cache: HashMap<Vec<usize>, ModeJet>,
    interior: Vec<usize>,
}

/// One member of the family: mode multi-indices and amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub modes: Vec<Vec<usize>>,
    pub amplitudes: Vec<f64>,
}

impl Sample {
    /// Value at `x` on a box with the given extents.
    pub fn eval(&self, x: &[f64], extents: &[f64]) -> f64 {
        self.modes
            .iter()
            .zip(&self.amplitudes)
            .map(|(m, a)| {
                a * x
                    .iter()
                    .zip(m)
                    .zip(extents)
                    .map(|((xi, &k), l)| (k as f64 * PI * xi / l).sin())
                    .product::<f64>()
            })
            .sum()
    }
}

impl SampleFamily {
    pub fn new(grid: &Grid, plan: SamplePlan) -> Result<Self> {
        if plan.samples == 0 {
            return Err(invalid("samples", "at least one sample is required"));
        }
        // at least 8 nodes per wavelength
        let max_mode = grid.resolution().iter().map(|&m| ((m - 1) / 4).max(1)).collect();
        Ok(SampleFamily {
            grid: *grid,
            plan,
            max_mode,
            cache: HashMap::new(),
            interior: grid.interior_nodes(),
        })
    }

    /// The `k`-th sample. Its random stream depends only on `(seed, k)`.
    pub fn draw(&self, k: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.plan.seed);
        rng.set_stream(k as u64);
        let count = rng.random_range(1..=MAX_MODES);
        let mut modes = Vec::with_capacity(count);
        let mut amplitudes = Vec::with_capacity(count);
        for _ in 0..count {
            let m: Vec<usize> = self.max_mode.iter().map(|&mm| rng.random_range(1..=mm)).collect();
            modes.push(m);
            amplitudes.push(StandardNormal.sample(&mut rng));
        }
        Sample { modes, amplitudes }
    }

    fn mode_jet(&mut self, mode: &[usize]) -> &ModeJet {
        if !self.cache.contains_key(mode) {
            let ext: Vec<f64> = self.grid.extents().to_vec();
            let m = mode.to_vec();
            let field = field_from_fn(&self.grid, 1, |x, out| {
                out[0] = x
                    .iter()
                    .zip(&m)
                    .zip(&ext)
                    .map(|((xi, &k), l)| (k as f64 * PI * xi / l).sin())
                    .product();
            });
            let j = jet(&field);
            let mut grad = Vec::new();
            let mut hess = Vec::new();
            let mut lap = Vec::new();
            for &node in &self.interior {
                grad.extend_from_slice(j.grad_at(node));
                hess.extend_from_slice(j.hess_at(node));
                lap.push(j.lap_at(node)[0]);
            }
            self.cache.insert(mode.to_vec(), ModeJet { grad, hess, lap });
        }
        &self.cache[mode]
    }

    /// Interior arrays (grad, hess, lap) of the sample, node-major.
    fn assemble(&mut self, s: &Sample) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.grid.n_dims();
        let ni = self.interior.len();
        let mut grad = vec![0.0; ni * n];
        let mut hess = vec![0.0; ni * n * n];
        let mut lap = vec![0.0; ni];
        for (mode, &a) in s.modes.iter().zip(&s.amplitudes) {
            let mj = self.mode_jet(mode);
            grad.iter_mut().zip(&mj.grad).for_each(|(g, v)| *g += a * v);
            hess.iter_mut().zip(&mj.hess).for_each(|(g, v)| *g += a * v);
            lap.iter_mut().zip(&mj.lap).for_each(|(g, v)| *g += a * v);
        }
        (grad, hess, lap)
    }

    fn norm(&self, data: &[f64], width: usize, q: f64) -> f64 {
        let mags: Vec<f64> = data
            .chunks_exact(width)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let max = mags.iter().copied().fold(0.0, f64::max);
        if q.is_infinite() || max == 0.0 {
            return max;
        }
        let s: f64 = mags.iter().map(|m| (m / max).powf(q)).sum();
        max * (s * self.grid.cell_volume()).powf(1.0 / q)
    }

    /// `‖D²v‖_q / ‖Δv‖_q`, or `None` for a degenerate sample.
    pub fn c2_ratio(&mut self, s: &Sample, q: f64) -> Option<f64> {
        let n = self.grid.n_dims();
        let (_, hess, lap) = self.assemble(s);
        let den = self.norm(&lap, 1, q);
        (den >= DEGENERATE_LAPLACIAN).then(|| self.norm(&hess, n * n, q) / den)
    }

    /// Embedding ratio for `target`, or `None` for a degenerate sample.
    pub fn c3_ratio(&mut self, s: &Sample, q: f64, target: SobolevTarget) -> Option<f64> {
        let n = self.grid.n_dims();
        let (grad, _, lap) = self.assemble(s);
        let den = self.norm(&lap, 1, q);
        let num = match target {
            SobolevTarget::Finite(qs) => self.norm(&grad, n, qs),
            SobolevTarget::Sup => self.norm(&grad, n, f64::INFINITY),
        };
        (den >= DEGENERATE_LAPLACIAN).then(|| num / den)
    }

    /// Coordinate ascent on the amplitudes; returns the improved sample and its ratio.
    pub fn ascend<F>(&mut self, start: Sample, mut objective: F) -> Option<(Sample, f64)>
    where
        F: FnMut(&mut Self, &Sample) -> Option<f64>,
    {
        let mut best = objective(self, &start)?;
        let mut cur = start;
        let mut step = 0.5;
        for _ in 0..self.plan.ascent_steps {
            let scale = cur.amplitudes.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let mut improved = false;
            for k in 0..cur.amplitudes.len() {
                for sign in [1.0, -1.0] {
                    let mut trial = cur.clone();
                    trial.amplitudes[k] += sign * step * scale;
                    if let Some(r) = objective(self, &trial) {
                        if r > best {
                            best = r;
                            cur = trial;
                            improved = true;
                            break;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        Some((cur, best))
    }

    /// Supremum of `objective` over the plan's samples after ascent.
    pub fn supremum<F>(&mut self, mut objective: F) -> Result<f64>
    where
        F: FnMut(&mut Self, &Sample) -> Option<f64>,
    {
        let mut best: Option<f64> = None;
        for k in 0..self.plan.samples {
            let s = self.draw(k);
            if let Some((_, r)) = self.ascend(s, &mut objective) {
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
        }
        best.ok_or(Error::DegenerateSamples {
            threshold: DEGENERATE_LAPLACIAN,
        })
    }
}

/// Estimated `C₂(q)`: max of `‖D²v‖_q/‖Δv‖_q` over the sampled family.
pub fn estimate_c2(grid: &Grid, q: f64, plan: SamplePlan) -> Result<f64> {
    if q < 2.0 {
        return Err(invalid("q", format!("must be ≥ 2, got {q}")));
    }
    let mut fam = SampleFamily::new(grid, plan)?;
    fam.supremum(|f, s| f.c2_ratio(s, q))
}

pub fn estimate_c1(grid: &Grid, plan: SamplePlan) -> Result<f64> {
    estimate_c2(grid, 2.0, plan)
}

/// Estimated `C₃(q)` for `q ≥ 2`, `q ≠ n`.
pub fn estimate_c3(grid: &Grid, q: f64, plan: SamplePlan) -> Result<f64> {
    let target = sobolev_target(q, grid.n_dims())?;
    estimate_c3_with(grid, q, target, plan)
}

fn estimate_c3_with(grid: &Grid, q: f64, target: SobolevTarget, plan: SamplePlan) -> Result<f64> {
    let mut fam = SampleFamily::new(grid, plan)?;
    fam.supremum(|f, s| f.c3_ratio(s, q, target))
}

/// Estimates `C₁`, `C₂(q)` and `C₃(q)` for every `q` in `qs`.
///
/// On a two-dimensional grid `q = 2` coincides with the dimension; its `C₃`
/// entry then uses the `‖∇v‖_∞` ratio, which is finite on a grid, and the
/// report is flagged accordingly.
pub fn estimate_constants(grid: &Grid, qs: &[f64], plan: SamplePlan) -> Result<ConstantsReport> {
    let n = grid.n_dims();
    let mut flags = Vec::new();
    if n == 2 {
        flags.push("n = 2 grid: formulas stated for n ≥ 3 evaluated verbatim".to_string());
    }
    let c1 = estimate_c1(grid, plan)?;
    let mut c2 = QTable::new();
    let mut c3 = QTable::new();
    c2.insert(2.0, c1);
    for &q in qs {
        if q != 2.0 {
            c2.insert(q, estimate_c2(grid, q, plan)?);
        }
        let target = match sobolev_target(q, n) {
            Ok(t) => t,
            Err(_) if q == 2.0 && n == 2 => {
                flags.push("C3 at q = n = 2 uses the sup-norm ratio".to_string());
                SobolevTarget::Sup
            }
            Err(e) => return Err(e),
        };
        c3.insert(q, estimate_c3_with(grid, q, target, plan)?);
    }
    let k_band = k_band(&c2);
    Ok(ConstantsReport {
        c1,
        c2_of_q: c2,
        c3_of_q: c3,
        k_band,
        sample_count: plan.samples,
        ascent_steps: plan.ascent_steps,
        seed: plan.seed,
        n_dims: n,
        resolution: grid.resolution().to_vec(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{jet, lq_norm};
    use crate::grid::{scalar_field, unit_grid};

    fn plan(samples: usize) -> SamplePlan {
        SamplePlan {
            samples,
            ascent_steps: 8,
            seed: 5,
        }
    }

    #[test]
    fn c1_on_unit_square_is_near_one() {
        let g = unit_grid(2, 33).unwrap();
        let c1 = estimate_c1(&g, plan(32)).unwrap();
        assert!((0.9..=1.2).contains(&c1), "C1 = {c1}");
    }

    #[test]
    fn single_eigenmode_ratio_is_at_most_one() {
        for m in [17, 33, 65] {
            let g = unit_grid(2, m).unwrap();
            let v = scalar_field(&g, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
            let j = jet(&v);
            let r = lq_norm(&j.hess(), 2.0).unwrap() / lq_norm(&j.lap(), 2.0).unwrap();
            let h = 1.0 / (m - 1) as f64;
            assert!(r <= 1.0 + h * h, "m = {m}: ratio {r}");
            assert!(r > 0.9);
        }
    }

    #[test]
    fn family_ratio_matches_direct_evaluation() {
        let g = unit_grid(2, 17).unwrap();
        let mut fam = SampleFamily::new(&g, plan(4)).unwrap();
        let s = fam.draw(3);
        let direct = {
            let s2 = s.clone();
            let v = field_from_fn(&g, 1, |x, out| {
                out[0] = s2
                    .modes
                    .iter()
                    .zip(&s2.amplitudes)
                    .map(|(m, a)| a * (m[0] as f64 * PI * x[0]).sin() * (m[1] as f64 * PI * x[1]).sin())
                    .sum();
            });
            let j = jet(&v);
            lq_norm(&j.hess(), 4.0).unwrap() / lq_norm(&j.lap(), 4.0).unwrap()
        };
        let fast = fam.c2_ratio(&s, 4.0).unwrap();
        assert!((direct - fast).abs() < 1e-12 * direct);
    }

    #[test]
    fn draws_are_prefix_stable() {
        let g = unit_grid(2, 17).unwrap();
        let a = SampleFamily::new(&g, plan(3)).unwrap();
        let b = SampleFamily::new(&g, plan(10)).unwrap();
        for k in 0..3 {
            assert_eq!(a.draw(k), b.draw(k));
        }
        let c3 = estimate_c2(&g, 4.0, plan(3)).unwrap();
        let c10 = estimate_c2(&g, 4.0, plan(10)).unwrap();
        assert!(c10 >= c3);
    }

    #[test]
    fn c3_branches() {
        assert_eq!(sobolev_target(4.0, 3).unwrap(), SobolevTarget::Sup);
        match sobolev_target(2.5, 3).unwrap() {
            SobolevTarget::Finite(qs) => assert!((qs - 15.0).abs() < 1e-12),
            SobolevTarget::Sup => panic!("expected finite branch"),
        }
        assert_eq!(sobolev_target(4.0, 2).unwrap(), SobolevTarget::Sup);
        assert!(sobolev_target(3.0, 3).is_err());
        assert!(sobolev_target(2.0, 2).is_err());

        let g = unit_grid(2, 17).unwrap();
        let c = estimate_c3(&g, 4.0, plan(6)).unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert!(estimate_c3(&g, 2.0, plan(6)).is_err());
    }

    #[test]
    fn c3_three_dimensional_finite_branch() {
        // q = 4 > n = 3 uses the sup branch; q = 2.5 < 3 gives q* = 15
        let g = unit_grid(3, 9).unwrap();
        let c = estimate_c3(&g, 2.5, plan(4)).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }

    #[test]
    fn report_json_field_names() {
        let g = unit_grid(2, 17).unwrap();
        let rep = estimate_constants(&g, &[2.0, 4.0], plan(4)).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for key in [
            "C1",
            "C2_of_q",
            "C3_of_q",
            "K_band",
            "sample_count",
            "ascent_steps",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["C2_of_q"].get("4").is_some());
        let back: ConstantsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, rep);
        assert!(rep.c1 > 0.0 && rep.c3(2.0).unwrap() > 0.0 && rep.c2(4.0).unwrap() > 0.0);
        assert!(rep.flags.iter().any(|f| f.contains("n = 2")));
    }
}
