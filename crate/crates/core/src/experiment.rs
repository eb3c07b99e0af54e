//! Configurable end-to-end pipelines: data generation, identification with
//! pHDMD or an unstructured baseline, and evaluation against the true model.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{dmd_fit, oi_fit, pod_galerkin};
use crate::data::{build_zt, dmd_snapshot_matrices, midpoint_matrices, pod_basis};
use crate::error::{Error, Result};
use crate::io::{self, Model};
use crate::linalg::{self, vstack, Mat, Vector};
use crate::metrics::{self, Descriptor, ErrorSummary, ResidualBound};
use crate::model::{msd_builder, PhSystem, STRUCTURE_TOL};
use crate::procrustes::{self, JrPair};
use crate::simulate::{self, add_noise, InputSignal, Trajectory};
use crate::solver::{solve_phdmd, SolverOptions, SolverReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Mass-spring-damper chain.
    Msd {
        n_masses: usize,
        mass: f64,
        stiffness: f64,
        damping: f64,
        #[serde(default = "one")]
        n_ports: usize,
    },
    /// Model stored as a manifest; relative paths resolve against the
    /// config file's directory.
    Manifest { path: PathBuf },
}

fn one() -> usize {
    1
}

/// Time grid and excitation of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub dt: f64,
    pub horizon: f64,
    /// One signal per input port.
    pub inputs: Vec<InputSignal>,
    /// Initial state; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Phase {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let steps = (self.horizon / self.dt).round();
        if (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon || steps < 1.0 {
            return Err(Error::Config(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub stddev: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Phdmd,
    Dmd,
    Oi,
    /// Intrusive Galerkin projection onto the POD basis; reduction only.
    Pod,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Phdmd => "phdmd",
            Method::Dmd => "dmd",
            Method::Oi => "oi",
            Method::Pod => "pod",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "phdmd" => Ok(Method::Phdmd),
            "dmd" => Ok(Method::Dmd),
            "oi" => Ok(Method::Oi),
            "pod" => Ok(Method::Pod),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected phdmd, dmd, oi or pod)"
            ))),
        }
    }
}

/// Sweep over reduced orders and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub orders: Vec<usize>,
    #[serde(default = "zero_noise")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "sweep_methods")]
    pub methods: Vec<Method>,
}

fn zero_noise() -> Vec<f64> {
    vec![0.0]
}

fn sweep_methods() -> Vec<Method> {
    vec![Method::Phdmd, Method::Oi, Method::Pod]
}

fn all_methods() -> Vec<Method> {
    vec![Method::Phdmd, Method::Dmd, Method::Oi]
}

fn default_truncation() -> f64 {
    linalg::DEFAULT_TRUNCATION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for FrequencySpec {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e3,
            points: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub train: Phase,
    pub test: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    /// Reduced state dimension; full order when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_truncation")]
    pub truncation_tol: f64,
    #[serde(default)]
    pub frequency: FrequencySpec,
    /// Directory used to resolve relative paths (set by [`load_config`]).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const PRESETS: [&str; 3] = ["msd-siso", "msd-noisy", "msd-mimo-reduction"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let siso = |noise: Option<NoiseSpec>| ExperimentConfig {
            name: Some(name.to_string()),
            model: ModelSpec::Msd {
                n_masses: 3,
                mass: 4.0,
                stiffness: 4.0,
                damping: 1.0,
                n_ports: 1,
            },
            train: Phase {
                dt: 0.04,
                horizon: 4.0,
                inputs: vec![InputSignal::TrainingExpSin],
                x0: None,
            },
            test: Phase {
                dt: 0.04,
                horizon: 10.0,
                inputs: vec![InputSignal::StepChirp],
                x0: None,
            },
            noise,
            reduction: None,
            sweep: None,
            methods: all_methods(),
            solver: SolverOptions::default(),
            truncation_tol: default_truncation(),
            frequency: FrequencySpec::default(),
            base_dir: PathBuf::new(),
        };
        match name {
            "msd-siso" => Ok(siso(None)),
            "msd-noisy" => Ok(siso(Some(NoiseSpec {
                stddev: 1e-4,
                seed: 0,
            }))),
            "msd-mimo-reduction" => Ok(ExperimentConfig {
                name: Some(name.to_string()),
                model: ModelSpec::Msd {
                    n_masses: 50,
                    mass: 4.0,
                    stiffness: 4.0,
                    damping: 1.0,
                    n_ports: 2,
                },
                train: Phase {
                    dt: 1e-3,
                    horizon: 20.0,
                    inputs: vec![InputSignal::TrainingExpSin, InputSignal::TrainingExpCos],
                    x0: None,
                },
                test: Phase {
                    dt: 1e-2,
                    horizon: 10.0,
                    inputs: vec![InputSignal::StepChirp, InputSignal::StepChirp],
                    x0: None,
                },
                noise: None,
                reduction: None,
                sweep: Some(SweepSpec {
                    orders: (2..=20).collect(),
                    noise_levels: vec![0.0, 1e-6, 1e-4],
                    methods: sweep_methods(),
                }),
                methods: vec![Method::Phdmd],
                solver: SolverOptions::default(),
                truncation_tol: default_truncation(),
                frequency: FrequencySpec::default(),
                base_dir: PathBuf::new(),
            }),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.steps()?;
        self.test.steps()?;
        for s in self.train.inputs.iter().chain(&self.test.inputs) {
            s.validate()?;
        }
        if let Some(noise) = &self.noise {
            if !(noise.stddev >= 0.0) || !noise.stddev.is_finite() {
                return Err(Error::Config(format!(
                    "noise stddev must be non-negative, got {}",
                    noise.stddev
                )));
            }
        }
        if self.reduction == Some(0) {
            return Err(Error::Config("reduction order must be positive".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.orders.is_empty() || sweep.orders.contains(&0) {
                return Err(Error::Config("sweep orders must be positive and non-empty".into()));
            }
            if sweep.noise_levels.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::Config("sweep noise levels must be non-negative".into()));
            }
            if sweep.methods.contains(&Method::Dmd) {
                return Err(Error::Config(
                    "the sweep compares continuous-time models; dmd is not supported there".into(),
                ));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.methods.contains(&Method::Pod) && self.reduction.is_none() {
            return Err(Error::Config("method 'pod' needs a reduction order".into()));
        }
        if !(self.truncation_tol >= 0.0) {
            return Err(Error::Config("truncation_tol must be non-negative".into()));
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        let f = &self.frequency;
        metrics::log_grid(f.min, f.max, f.points).map_err(|e| Error::Config(e.to_string()))?;
        if let ModelSpec::Msd { n_masses, n_ports, .. } = self.model {
            if n_masses == 0 || !(1..=2).contains(&n_ports) || n_ports > n_masses {
                return Err(Error::Config(format!(
                    "msd model needs n_masses ≥ 1 and 1 ≤ n_ports ≤ min(2, n_masses), got {n_masses} masses, {n_ports} ports"
                )));
            }
        }
        Ok(())
    }

    pub fn omega(&self) -> Vec<f64> {
        let f = &self.frequency;
        metrics::log_grid(f.min, f.max, f.points).expect("validated")
    }
}

/// Reads a JSON config; relative manifest paths resolve against its
/// directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display()))
    })?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

/// Builds or loads the reference model.
pub fn reference_model(cfg: &ExperimentConfig) -> Result<Model> {
    match &cfg.model {
        ModelSpec::Msd {
            n_masses,
            mass,
            stiffness,
            damping,
            n_ports,
        } => Ok(Model::Ph(msd_builder(*n_masses, *mass, *stiffness, *damping, *n_ports)?)),
        ModelSpec::Manifest { path } => {
            let full = if path.is_absolute() {
                path.clone()
            } else {
                cfg.base_dir.join(path)
            };
            io::load_model(&full)
        }
    }
}

fn n_states_of(model: &Model) -> usize {
    match model {
        Model::Ph(s) => s.n_states(),
        Model::Lti { sys, .. } => sys.n_states(),
    }
}

fn initial_state(phase: &Phase, n: usize) -> Result<Vector> {
    match &phase.x0 {
        None => Ok(Vector::zeros(n)),
        Some(v) if v.len() == n => Ok(Vector::from_column_slice(v)),
        Some(v) => Err(Error::Config(format!(
            "x0 has {} entries but the model has {n} states",
            v.len()
        ))),
    }
}

fn check_inputs(phase: &Phase, model: &Model, which: &str) -> Result<()> {
    let (m, _) = model.n_ports();
    if phase.inputs.len() != m {
        return Err(Error::Config(format!(
            "{which} phase lists {} input signals but the model has {m} inputs",
            phase.inputs.len()
        )));
    }
    Ok(())
}

/// Simulates a phase of the reference model.
pub fn simulate_phase(model: &Model, phase: &Phase) -> Result<Trajectory> {
    let x0 = initial_state(phase, n_states_of(model))?;
    simulate::simulate_model(model, &phase.inputs, &x0, phase.dt, phase.steps()?)
}

/// Clean and (possibly) noisy training data.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub clean: Trajectory,
    pub train: Trajectory,
    pub test: Trajectory,
}

pub fn generate(cfg: &ExperimentConfig, model: &Model) -> Result<GeneratedData> {
    check_inputs(&cfg.train, model, "train")?;
    check_inputs(&cfg.test, model, "test")?;
    let clean = simulate_phase(model, &cfg.train)?;
    let train = match cfg.noise {
        Some(n) if n.stddev > 0.0 => add_noise(&clean, n.stddev, n.seed)?,
        _ => clean.clone(),
    };
    let test = simulate_phase(model, &cfg.test)?;
    Ok(GeneratedData { clean, train, test })
}

/// Objective values of the pHDMD fit and its starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhdmdFitInfo {
    pub f_init: f64,
    pub f_t_init: f64,
    pub f_final: f64,
    pub f_t_final: f64,
    pub rank_t: usize,
    pub rows_t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_bound: Option<ResidualBound>,
}

#[derive(Debug, Clone)]
pub struct Identified {
    pub method: Method,
    pub model: Model,
    /// POD basis, when reduced.
    pub phi: Option<Mat>,
    pub report: Option<SolverReport>,
    pub fit: Option<PhdmdFitInfo>,
    pub pair: Option<JrPair>,
}

fn energy_matrix(reference: &Model) -> Result<&PhSystem> {
    match reference {
        Model::Ph(sys) => Ok(sys),
        Model::Lti { .. } => Err(Error::Config(
            "pHDMD and POD need the energy matrix H of a port-Hamiltonian reference model".into(),
        )),
    }
}

/// Identifies a model of order `reduction` (full order when `None`) from
/// the training trajectory.
pub fn identify(
    method: Method,
    reference: &Model,
    train: &Trajectory,
    reduction: Option<usize>,
    opts: &SolverOptions,
    truncation_tol: f64,
) -> Result<Identified> {
    let phi = reduction.map(|r| pod_basis(&train.x, r)).transpose()?;
    let mut out = Identified {
        method,
        model: Model::Ph(PhSystem::new(
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
        )?),
        phi: phi.clone(),
        report: None,
        fit: None,
        pair: None,
    };
    match method {
        Method::Phdmd => {
            let h = &energy_matrix(reference)?.h;
            let snaps = midpoint_matrices(train)?;
            let data = build_zt(h, &snaps, phi.as_ref())?;
            let start = procrustes::init_rank_deficient(&data.z, &data.t)?;
            let (pair, report) = solve_phdmd(&data, &start.r, opts)?;
            let sys = data.to_ph_system(&pair)?;
            let violations = sys.validate(STRUCTURE_TOL);
            if !violations.is_empty() {
                return Err(Error::Structure(violations));
            }
            let rank_t = report.rank;
            out.fit = Some(PhdmdFitInfo {
                f_init: report.history[0].f,
                f_t_init: report.history[0].f_t,
                f_final: report.final_f(),
                f_t_final: report.final_f_t(),
                rank_t,
                rows_t: data.t.nrows(),
                residual_bound: metrics::residual_bound(&data, &pair).ok(),
            });
            out.model = Model::Ph(sys);
            out.report = Some(report);
            out.pair = Some(pair);
        }
        Method::Dmd => {
            let (z0, z1) = dmd_snapshot_matrices(train, false)?;
            let n = train.n_states();
            let (z0, z1, nr) = match &phi {
                Some(phi) => {
                    let proj = |z: &Mat| {
                        let rest = z.rows(n, z.nrows() - n).into_owned();
                        vstack(&(phi.transpose() * z.rows(0, n)), &rest)
                    };
                    (proj(&z0), proj(&z1), phi.ncols())
                }
                None => (z0, z1, n),
            };
            out.model = Model::Lti {
                sys: dmd_fit(&z0, &z1, nr, truncation_tol)?,
                discrete_dt: Some(train.dt),
            };
        }
        Method::Oi => {
            let snaps = midpoint_matrices(train)?;
            out.model = Model::Lti {
                sys: oi_fit(&snaps, phi.as_ref(), truncation_tol)?,
                discrete_dt: None,
            };
        }
        Method::Pod => {
            let phi = phi
                .as_ref()
                .ok_or_else(|| Error::Config("method 'pod' needs a reduction order".into()))?;
            out.model = Model::Ph(pod_galerkin(energy_matrix(reference)?, phi)?);
        }
    }
    Ok(out)
}

/// Stability indicator of an identified model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// Spectral abscissa (continuous time) or spectral radius (discrete time).
    pub value: f64,
    pub discrete: bool,
    pub stable: bool,
}

pub fn stability(model: &Model) -> Result<Stability> {
    match model {
        Model::Ph(sys) => {
            let a = sys.spectral_abscissa()?;
            Ok(Stability {
                value: a,
                discrete: false,
                stable: a <= 1e-10,
            })
        }
        Model::Lti {
            sys,
            discrete_dt: None,
        } => {
            let a = linalg::spectral_abscissa(&sys.a)?;
            Ok(Stability {
                value: a,
                discrete: false,
                stable: a <= 1e-10,
            })
        }
        Model::Lti { sys, .. } => {
            let r = linalg::spectral_radius(&sys.a)?;
            Ok(Stability {
                value: r,
                discrete: true,
                stable: r <= 1.0 + 1e-10,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub output_error: ErrorSummary,
    pub stability: Stability,
    /// Largest discrete dissipation residual of the identified pH model on
    /// its own test trajectory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_dissipation_residual: Option<f64>,
    /// Sampled norms of the error system and their values relative to the
    /// reference transfer function (continuous-time models only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferComparison {
    pub h_inf_sampled: f64,
    pub h2_sampled: f64,
    pub rel_h_inf_sampled: f64,
    pub rel_h2_sampled: f64,
}

pub fn compare_transfer(reference: &Model, identified: &Model, omega: &[f64]) -> Result<TransferComparison> {
    let a = Descriptor::from_model(reference)?;
    let b = Descriptor::from_model(identified)?;
    let err = metrics::transfer_error(&a, &b, omega)?;
    let base = metrics::transfer_eval(&a, omega)?;
    let rel = |e: f64, b: f64| if b > 0.0 { e / b } else { e };
    Ok(TransferComparison {
        h_inf_sampled: err.h_inf_sampled,
        h2_sampled: err.h2_sampled,
        rel_h_inf_sampled: rel(err.h_inf_sampled, base.h_inf_sampled),
        rel_h2_sampled: rel(err.h2_sampled, base.h2_sampled),
    })
}

/// Initial state of an identified model from the full-order one.
fn reduced_x0(x0: &Vector, phi: Option<&Mat>, n_model: usize) -> Result<Vector> {
    let x = match phi {
        Some(phi) => phi.transpose() * x0,
        // a zero state is zero in any coordinates
        None if x0.iter().all(|v| *v == 0.0) => Vector::zeros(n_model),
        None => x0.clone(),
    };
    if x.len() != n_model {
        return Err(Error::dims(
            "evaluate",
            format!("initial state has {} entries, model has {n_model} states", x.len()),
        ));
    }
    Ok(x)
}

/// Simulates `identified` on the test phase and compares with the reference
/// test trajectory.
pub fn evaluate(
    reference: &Model,
    identified: &Model,
    phi: Option<&Mat>,
    test_phase: &Phase,
    reference_test: &Trajectory,
    omega: &[f64],
) -> Result<(Evaluation, Trajectory)> {
    if reference.n_ports() != identified.n_ports() {
        return Err(Error::dims(
            "evaluate",
            format!(
                "reference has (inputs, outputs) {:?}, identified model {:?}",
                reference.n_ports(),
                identified.n_ports()
            ),
        ));
    }
    let x0_full = initial_state(test_phase, n_states_of(reference))?;
    let x0 = reduced_x0(&x0_full, phi, n_states_of(identified))?;
    let traj = simulate::simulate_model(
        identified,
        &test_phase.inputs,
        &x0,
        test_phase.dt,
        test_phase.steps()?,
    )?;
    let output_error = metrics::trajectory_error(&reference_test.y, &traj.y)?;
    let max_dissipation_residual = match identified {
        Model::Ph(sys) => Some(
            metrics::dissipation_residuals(&sys.h, &traj)?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max),
        ),
        _ => None,
    };
    let transfer = match identified {
        Model::Lti {
            discrete_dt: Some(_),
            ..
        } => None,
        _ => Some(compare_transfer(reference, identified, omega)?),
    };
    Ok((
        Evaluation {
            output_error,
            stability: stability(identified)?,
            max_dissipation_residual,
            transfer,
        },
        traj,
    ))
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_states: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<PhdmdFitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<crate::solver::Termination>,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub noise: f64,
    pub order: usize,
    pub h_inf_sampled: f64,
    pub h2_sampled: f64,
    pub rel_h_inf_sampled: f64,
    pub rel_h2_sampled: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_states: usize,
    pub n_ports: usize,
    pub train_samples: usize,
    pub methods: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub sweep: Vec<SweepPoint>,
}

impl Summary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Sweep points of one method and noise level, ordered by reduced order.
    pub fn sweep_curve(&self, m: Method, noise: f64) -> Vec<&SweepPoint> {
        let mut pts: Vec<_> = self
            .sweep
            .iter()
            .filter(|p| p.method == m && p.noise == noise)
            .collect();
        pts.sort_by_key(|p| p.order);
        pts
    }
}

/// Runs the reduction sweep; points are computed in parallel.
pub fn run_sweep(cfg: &ExperimentConfig, reference: &Model, clean: &Trajectory) -> Result<Vec<SweepPoint>> {
    let Some(sweep) = &cfg.sweep else {
        return Ok(Vec::new());
    };
    let omega = cfg.omega();
    let seed = cfg.noise.map_or(0, |n| n.seed);
    let noisy: Vec<(f64, Trajectory)> = sweep
        .noise_levels
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let t = if s > 0.0 {
                add_noise(clean, s, seed.wrapping_add(k as u64))?
            } else {
                clean.clone()
            };
            Ok((s, t))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(Method, usize, usize)> = sweep
        .methods
        .iter()
        .flat_map(|&m| {
            (0..noisy.len()).flat_map(move |k| sweep.orders.iter().map(move |&r| (m, k, r)))
        })
        .collect();
    let mut points = jobs
        .par_iter()
        .map(|&(method, k, order)| {
            let (noise, traj) = &noisy[k];
            let id = identify(method, reference, traj, Some(order), &cfg.solver, cfg.truncation_tol)?;
            let cmp = compare_transfer(reference, &id.model, &omega)?;
            Ok(SweepPoint {
                method,
                noise: *noise,
                order,
                h_inf_sampled: cmp.h_inf_sampled,
                h2_sampled: cmp.h2_sampled,
                rel_h_inf_sampled: cmp.rel_h_inf_sampled,
                rel_h2_sampled: cmp.rel_h2_sampled,
                stable: stability(&id.model)?.stable,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        (a.method.name(), a.noise, a.order)
            .partial_cmp(&(b.method.name(), b.noise, b.order))
            .expect("finite noise levels")
    });
    Ok(points)
}

/// Everything an experiment produced, kept in memory for callers that do
/// not need the artifact directory.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub data: GeneratedData,
    pub identified: Vec<Identified>,
    pub test_runs: Vec<Trajectory>,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let reference = reference_model(cfg)?;
    let data = generate(cfg, &reference)?;
    let omega = cfg.omega();
    let results = cfg
        .methods
        .par_iter()
        .map(|&m| {
            let id = identify(m, &reference, &data.train, cfg.reduction, &cfg.solver, cfg.truncation_tol)?;
            let (eval, traj) = evaluate(&reference, &id.model, id.phi.as_ref(), &cfg.test, &data.test, &omega)?;
            Ok((id, eval, traj))
        })
        .collect::<Result<Vec<_>>>()?;
    let sweep = run_sweep(cfg, &reference, &data.clean)?;
    let (m, _) = reference.n_ports();
    let mut summary = Summary {
        name: cfg.name.clone(),
        n_states: n_states_of(&reference),
        n_ports: m,
        train_samples: data.train.n_samples(),
        methods: Vec::new(),
        sweep,
    };
    let mut identified = Vec::new();
    let mut test_runs = Vec::new();
    for (id, evaluation, traj) in results {
        summary.methods.push(MethodSummary {
            method: id.method,
            n_states: n_states_of(&id.model),
            fit: id.fit.clone(),
            iterations: id.report.as_ref().map(|r| r.iterations),
            termination: id.report.as_ref().map(|r| r.termination),
            evaluation,
        });
        identified.push(id);
        test_runs.push(traj);
    }
    Ok(ExperimentRun {
        data,
        identified,
        test_runs,
        summary,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `t, y_ref_i, y_test_i, abs_error` for one method.
pub fn write_error_csv(reference: &Trajectory, test: &Trajectory, err: &ErrorSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let p = reference.n_outputs();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("y_ref_{i}")));
    header.extend((1..=p).map(|i| format!("y_id_{i}")));
    header.push("abs_error".to_string());
    w.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
    for (k, &t) in reference.t.iter().enumerate() {
        let (y_ref, y_id) = (reference.y.column(k), test.y.column(k));
        let row = std::iter::once(t)
            .chain(y_ref.iter().copied())
            .chain(y_id.iter().copied())
            .chain(std::iter::once(err.abs_error[k]))
            .map(|v| format!("{v:.16e}"));
        w.write_record(row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record([
        "method",
        "noise",
        "order",
        "h_inf_sampled",
        "h2_sampled",
        "rel_h_inf_sampled",
        "rel_h2_sampled",
        "stable",
    ])
    .map_err(|e| Error::parse(path, e.to_string()))?;
    for p in points {
        w.write_record([
            p.method.name().to_string(),
            format!("{:e}", p.noise),
            p.order.to_string(),
            format!("{:.16e}", p.h_inf_sampled),
            format!("{:.16e}", p.h2_sampled),
            format!("{:.16e}", p.rel_h_inf_sampled),
            format!("{:.16e}", p.rel_h2_sampled),
            p.stable.to_string(),
        ])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Saves an identified model (`.mtx` blocks plus manifest) into `dir`.
pub fn save_model(model: &Model, dir: &Path) -> Result<PathBuf> {
    match model {
        Model::Ph(sys) => io::save_system(sys, dir),
        Model::Lti { sys, discrete_dt } => io::save_lti(sys, *discrete_dt, dir),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs an experiment and writes the artifact directory:
///
/// ```text
/// out/config.json            resolved configuration
/// out/train.csv              training data (noisy if configured)
/// out/train_clean.csv        noise-free training data
/// out/test_reference.csv     reference test trajectory
/// out/<method>/model/        identified model (.mtx + manifest.json)
/// out/<method>/solver_report.json
/// out/<method>/test.csv      identified model on the test input
/// out/<method>/error.csv     output comparison and per-sample error
/// out/<method>/metrics.json
/// out/summary.json           all methods (and sweep points)
/// out/sweep.csv              sweep points, if a sweep is configured
/// ```
pub fn write_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let run = run_experiment(cfg)?;
    create_dir(out)?;
    write_json(cfg, &out.join("config.json"))?;
    simulate::write_trajectory_csv(&run.data.train, &out.join("train.csv"))?;
    simulate::write_trajectory_csv(&run.data.clean, &out.join("train_clean.csv"))?;
    simulate::write_trajectory_csv(&run.data.test, &out.join("test_reference.csv"))?;
    for ((id, traj), summary) in run
        .identified
        .iter()
        .zip(&run.test_runs)
        .zip(&run.summary.methods)
    {
        let dir = out.join(id.method.name());
        create_dir(&dir)?;
        save_model(&id.model, &dir.join("model"))?;
        if let Some(report) = &id.report {
            write_json(report, &dir.join("solver_report.json"))?;
        }
        simulate::write_trajectory_csv(traj, &dir.join("test.csv"))?;
        write_error_csv(
            &run.data.test,
            traj,
            &summary.evaluation.output_error,
            &dir.join("error.csv"),
        )?;
        write_json(summary, &dir.join("metrics.json"))?;
    }
    if !run.summary.sweep.is_empty() {
        write_sweep_csv(&run.summary.sweep, &out.join("sweep.csv"))?;
    }
    write_json(&run.summary, &out.join("summary.json"))?;
    Ok(run.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let cfg = ExperimentConfig::preset(p).unwrap();
            cfg.validate().unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, cfg);
        }
        assert!(matches!(
            ExperimentConfig::preset("nope"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn phase_steps() {
        let mut phase = ExperimentConfig::preset("msd-siso").unwrap().train;
        assert_eq!(phase.steps().unwrap(), 100);
        phase.horizon = 0.0;
        assert!(phase.steps().is_err());
        phase.horizon = 0.05;
        assert!(phase.steps().is_err());
    }

    #[test]
    fn config_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            "{\n  \"model\": {\"kind\": \"msd\", \"n_masses\": 3, \"mass\": 1, \"stiffness\": 1, \"damping\": 1},\n  \"train\": {\"dt\": \"x\"}\n}",
        )
        .unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("line 3"), "{err}");

        let mut cfg = ExperimentConfig::preset("msd-siso").unwrap();
        cfg.train.horizon = 0.0;
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert!(load_config(&path).unwrap_err().is_config_error());
    }

    #[test]
    fn manifest_model_relative_path() {
        let dir = tempfile::tempdir().unwrap();
        let sys = msd_builder(2, 1.0, 1.0, 0.5, 1).unwrap();
        io::save_system(&sys, &dir.path().join("m")).unwrap();
        let mut cfg = ExperimentConfig::preset("msd-siso").unwrap();
        cfg.model = ModelSpec::Manifest { path: "m".into() };
        let path = dir.path().join("cfg.json");
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let cfg = load_config(&path).unwrap();
        match reference_model(&cfg).unwrap() {
            Model::Ph(s) => assert_eq!(s, sys),
            _ => panic!("expected a pH model"),
        }
    }

    #[test]
    fn siso_pipeline() {
        let cfg = ExperimentConfig::preset("msd-siso").unwrap();
        let run = run_experiment(&cfg).unwrap();
        let s = &run.summary;
        let ph = s.method(Method::Phdmd).unwrap();
        let fit = ph.fit.as_ref().unwrap();
        assert!(fit.f_init <= 1e-8 && fit.f_t_init <= 1e-8);
        assert!(fit.f_final <= 1e-8 && fit.f_t_final <= 1e-8);
        assert!(ph.evaluation.stability.stable);
        assert!(ph.evaluation.output_error.rel_l2 <= 1e-6);
        let dmd = s.method(Method::Dmd).unwrap();
        assert!(dmd.evaluation.stability.discrete);
    }

    #[test]
    fn reduced_identification_dimensions() {
        let mut cfg = ExperimentConfig::preset("msd-siso").unwrap();
        cfg.reduction = Some(4);
        cfg.methods = vec![Method::Phdmd, Method::Dmd, Method::Oi, Method::Pod];
        let run = run_experiment(&cfg).unwrap();
        for m in &run.summary.methods {
            assert_eq!(m.n_states, 4, "{:?}", m.method);
        }
        let mut cfg = ExperimentConfig::preset("msd-siso").unwrap();
        cfg.reduction = Some(50);
        assert!(matches!(run_experiment(&cfg), Err(Error::RankExceeded { .. })));
    }

    #[test]
    fn artifacts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset("msd-siso").unwrap();
        write_experiment(&cfg, dir.path()).unwrap();
        for f in [
            "config.json",
            "train.csv",
            "test_reference.csv",
            "summary.json",
            "phdmd/model/manifest.json",
            "phdmd/solver_report.json",
            "phdmd/error.csv",
            "dmd/model/manifest.json",
            "oi/metrics.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let train = simulate::read_trajectory_csv(&dir.path().join("train.csv")).unwrap();
        assert_eq!(train.n_samples(), 101);
        assert_eq!((train.n_inputs(), train.n_states(), train.n_outputs()), (1, 6, 1));
        let model = io::load_system(&dir.path().join("phdmd/model")).unwrap();
        assert!(model.validate(STRUCTURE_TOL).is_empty());
    }
}
