//! Experiment configuration: a JSON file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plap_core::continuation::default_schedule;
use plap_core::grid::{make_grid, Grid};
use plap_core::linear_elliptic::SamplePlan;
use plap_core::nonlinear_solver::SolverConfig;
use plap_core::oracle_minimizer::Discretization;

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Solve,
    Oracle,
    Constants,
    Inequalities,
    Continuation,
    Mms,
    Report,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Oracle => "oracle",
            Experiment::Constants => "constants",
            Experiment::Inequalities => "inequalities",
            Experiment::Continuation => "continuation",
            Experiment::Mms => "mms",
            Experiment::Report => "report",
        }
    }
}

/// Box `[0, L₁] × … × [0, L_n]` with `points` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_dims: usize,
    pub points: usize,
    /// Unit box when empty.
    pub extents: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_dims: 2,
            points: 33,
            extents: Vec::new(),
        }
    }
}

impl GridConfig {
    pub fn build(&self, points: usize) -> Result<Grid, Failure> {
        let extents = if self.extents.is_empty() {
            vec![1.0; self.n_dims]
        } else {
            self.extents.clone()
        };
        Ok(make_grid(self.n_dims, &vec![points; self.n_dims], &extents)?)
    }
}

/// Right-hand side `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// `f_i = a_i Π_j sin(m_j π x_j / L_j)`; all modes 1 when `modes` is empty.
    Sine {
        amplitudes: Vec<f64>,
        #[serde(default)]
        modes: Vec<usize>,
    },
    /// `f_i = c_i` in the interior.
    Constant { values: Vec<f64> },
    /// Data for which the lowest sine mode with these amplitudes is an exact
    /// discrete solution, at the configured `p` and `μ`.
    Manufactured {
        amplitudes: Vec<f64>,
        #[serde(default = "nondivergence")]
        discretization: Discretization,
    },
    /// A field dump written by this tool, with its `.json` sidecar.
    Dump { path: PathBuf },
}

fn nondivergence() -> Discretization {
    Discretization::Nondivergence
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Sine {
            amplitudes: vec![1.0],
            modes: Vec::new(),
        }
    }
}

/// Where `C₁, C₂(q), C₃(q)` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    /// A `constants.json` from a previous run; estimated on the problem grid otherwise.
    pub path: Option<PathBuf>,
    pub samples: usize,
    pub ascent_steps: usize,
    /// Exponents tabulated by the `constants` experiment.
    pub qs: Vec<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        let plan = SamplePlan::default();
        ConstantsConfig {
            path: None,
            samples: plan.samples,
            ascent_steps: plan.ascent_steps,
            qs: vec![2.0, 4.0, 8.0, 16.0],
        }
    }
}

impl ConstantsConfig {
    pub fn plan(&self, seed: u64) -> SamplePlan {
        SamplePlan {
            samples: self.samples,
            ascent_steps: self.ascent_steps,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Gradient tolerance, relative to `max(1, ‖f‖₂)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: 1e-10,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalityConfig {
    pub p: f64,
    /// μ of the two μ-dependence bounds.
    pub mu: f64,
    /// μ values compared by the tensor Lipschitz sweep.
    pub tensor_mu: Vec<f64>,
    pub components: usize,
    pub dims: usize,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig {
            p: 1.5,
            mu: 0.5,
            tensor_mu: vec![1e-6, 1e-3, 1.0],
            components: 2,
            dims: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub mu_schedule: Vec<f64>,
    pub weak_tests: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            mu_schedule: default_schedule(),
            weak_tests: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsConfig {
    /// Amplitudes of the lowest sine mode used as exact solution.
    pub amplitudes: Vec<f64>,
}

impl Default for MmsConfig {
    fn default() -> Self {
        MmsConfig {
            amplitudes: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Output directories of earlier runs.
    pub inputs: Vec<PathBuf>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverConfig,
    pub grid: GridConfig,
    /// Points per axis of each refinement level (`mms`).
    pub grids: Vec<usize>,
    pub data: DataSpec,
    pub out: PathBuf,
    pub seed: u64,
    /// Samples per inequality sweep.
    pub samples: usize,
    pub constants: ConstantsConfig,
    pub oracle: OracleConfig,
    pub inequalities: InequalityConfig,
    pub continuation: ContinuationConfig,
    pub mms: MmsConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            solver: SolverConfig::default(),
            grid: GridConfig::default(),
            grids: vec![17, 33, 65],
            data: DataSpec::default(),
            out: PathBuf::from("out"),
            seed: 0,
            samples: 100_000,
            constants: ConstantsConfig::default(),
            oracle: OracleConfig::default(),
            inequalities: InequalityConfig::default(),
            continuation: ContinuationConfig::default(),
            mms: MmsConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a configuration file. A manifest written by a previous run is
    /// accepted as well; its `config` entry is used.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if value.get("manifest_version").is_some() {
            value = value["config"].take();
        }
        serde_json::from_value(value).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// Command-line overrides; set fields win over the file.
    pub fn apply(&mut self, experiment: Experiment, o: &Overrides) {
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.p {
            self.solver.p = v;
            if experiment == Experiment::Inequalities {
                self.inequalities.p = v;
            }
        }
        if let Some(v) = o.mu {
            self.solver.mu = v;
            if experiment == Experiment::Inequalities {
                self.inequalities.mu = v;
            }
        }
        if let Some(v) = o.q {
            self.solver.q = v;
        }
        if let Some(v) = &o.grids {
            self.grids = v.clone();
        }
        if let Some(v) = o.points {
            self.grid.points = v;
        }
        if let Some(v) = o.dims {
            self.grid.n_dims = v;
        }
        if let Some(v) = o.samples {
            if experiment == Experiment::Constants {
                self.constants.samples = v;
            } else {
                self.samples = v;
            }
        }
        if let Some(v) = o.picard_tol {
            self.solver.picard_tol = v;
        }
        if let Some(v) = o.max_iters {
            self.solver.picard_max_iters = v;
        }
        if let Some(v) = o.oracle_tol {
            self.oracle.tol = v;
        }
        if let Some(v) = &o.constants {
            self.constants.path = Some(v.clone());
        }
        if let Some(v) = &o.qs {
            self.constants.qs = v.clone();
        }
        if let Some(v) = &o.mu_schedule {
            self.continuation.mu_schedule = v.clone();
        }
        if let Some(v) = &o.amplitudes {
            match &mut self.data {
                DataSpec::Sine { amplitudes, .. } | DataSpec::Manufactured { amplitudes, .. } => {
                    *amplitudes = v.clone()
                }
                DataSpec::Constant { values } => *values = v.clone(),
                DataSpec::Dump { .. } => {}
            }
            self.mms.amplitudes = v.clone();
        }
        if let Some(v) = &o.dump {
            self.data = DataSpec::Dump { path: v.clone() };
        }
        if let Some(v) = &o.inputs {
            self.report.inputs = v.clone();
        }
    }
}

/// Flag values; `None` leaves the configuration untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub mu: Option<f64>,
    pub q: Option<f64>,
    pub grids: Option<Vec<usize>>,
    pub points: Option<usize>,
    pub dims: Option<usize>,
    pub samples: Option<usize>,
    pub picard_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub oracle_tol: Option<f64>,
    pub constants: Option<PathBuf>,
    pub qs: Option<Vec<f64>>,
    pub mu_schedule: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<f64>>,
    pub dump: Option<PathBuf>,
    pub inputs: Option<Vec<PathBuf>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"solver": {"p": 1.8}, "data": {"kind": "constant", "values": [2.0]}}"#)
                .unwrap();
        assert_eq!(cfg.solver.p, 1.8);
        assert_eq!(cfg.solver.mu, SolverConfig::default().mu);
        assert_eq!(cfg.data, DataSpec::Constant { values: vec![2.0] });
        assert_eq!(cfg.grid.points, 33);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"grdi": {}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"grid": {"pts": 3}}"#).is_err());
    }

    #[test]
    fn flags_win_over_the_file() {
        let mut cfg = ExperimentConfig::default();
        let o = Overrides {
            p: Some(1.7),
            samples: Some(10),
            amplitudes: Some(vec![3.0, 4.0]),
            grids: Some(vec![9, 17]),
            ..Default::default()
        };
        cfg.apply(Experiment::Inequalities, &o);
        assert_eq!(cfg.solver.p, 1.7);
        assert_eq!(cfg.inequalities.p, 1.7);
        assert_eq!(cfg.samples, 10);
        assert_eq!(cfg.grids, vec![9, 17]);
        assert_eq!(cfg.mms.amplitudes, vec![3.0, 4.0]);
        assert!(matches!(&cfg.data, DataSpec::Sine { amplitudes, .. } if amplitudes == &[3.0, 4.0]));

        let mut cfg = ExperimentConfig::default();
        cfg.apply(
            Experiment::Constants,
            &Overrides {
                samples: Some(5),
                ..Default::default()
            },
        );
        assert_eq!(cfg.constants.samples, 5);
        assert_eq!(cfg.samples, 100_000);
    }

    #[test]
    fn grid_defaults_to_the_unit_box() {
        let g = GridConfig::default().build(9).unwrap();
        assert_eq!(g.extents(), &[1.0, 1.0]);
        assert!(GridConfig {
            n_dims: 4,
            ..Default::default()
        }
        .build(9)
        .is_err());
    }
}
