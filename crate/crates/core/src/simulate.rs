//! Structure-preserving time integration with the implicit midpoint rule,
//! input signals, measurement noise and the trajectory CSV format.

use std::fs;
use std::path::Path;

use nalgebra::linalg::LU;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Model;
use crate::linalg::{Mat, Vector};
use crate::model::{LtiSystem, PhSystem};

/// Scalar input signal `u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    /// `exp(−t/2)·sin(t²)`
    TrainingExpSin,
    /// `exp(−t/2)·cos(t²)`
    TrainingExpCos,
    /// Default test input: `½·𝟙[t ≥ 1] + exp(−t/4)·sin(t + t²/4)`.
    StepChirp,
    /// Piecewise-linear interpolation of tabulated values.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let v = match self {
            InputSignal::Zero => 0.0,
            InputSignal::TrainingExpSin => (-t / 2.0).exp() * (t * t).sin(),
            InputSignal::TrainingExpCos => (-t / 2.0).exp() * (t * t).cos(),
            InputSignal::StepChirp => {
                let step = if t >= 1.0 { 0.5 } else { 0.0 };
                step + (-t / 4.0).exp() * (t + t * t / 4.0).sin()
            }
            InputSignal::Table { times, values } => table_lookup(times, values, t)?,
        };
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if let InputSignal::Table { times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(Error::Config(format!(
                    "input table needs matching non-empty times/values (got {} and {})",
                    times.len(),
                    values.len()
                )));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config("input table times must increase strictly".into()));
            }
            if times.iter().chain(values).any(|v| !v.is_finite()) {
                return Err(Error::Config("input table has non-finite entries".into()));
            }
        }
        Ok(())
    }
}

fn table_lookup(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let (first, last) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Config("empty input table".into())),
    };
    // accept roundoff-level overshoot of the final grid point
    let slack = 1e-9 * (last - first).abs().max(1.0);
    if !(t >= first - slack && t <= last + slack) {
        return Err(Error::OutOfRange {
            t,
            start: first,
            end: last,
        });
    }
    let t = t.clamp(first, last);
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return Ok(values[0]);
    }
    if k >= times.len() {
        return Ok(values[times.len() - 1]);
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    Ok(values[k - 1] * (1.0 - w) + values[k] * w)
}

/// Vector input: one signal per port.
pub fn eval_input(signals: &[InputSignal], t: f64) -> Result<Vector> {
    let vals = signals
        .iter()
        .map(|s| s.eval(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Vector::from_vec(vals))
}

/// Uniformly sampled input/state/output data; column `i` is time `t[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub u: Mat,
    pub x: Mat,
    pub y: Mat,
}

impl Trajectory {
    pub fn n_samples(&self) -> usize {
        self.t.len()
    }

    pub fn n_states(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let k = self.t.len();
        if self.u.ncols() != k || self.x.ncols() != k || self.y.ncols() != k {
            return Err(Error::dims(
                "Trajectory",
                format!(
                    "{k} time stamps but U has {}, X has {}, Y has {} columns",
                    self.u.ncols(),
                    self.x.ncols(),
                    self.y.ncols()
                ),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        for w in self.t.windows(2) {
            if ((w[1] - w[0]) - self.dt).abs() > 1e-12 * w[1].abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "non-uniform time grid: step {} vs dt {}",
                    w[1] - w[0],
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

fn time_grid(dt: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 * dt).collect()
}

fn input_matrix(inputs: &[InputSignal], t: &[f64]) -> Result<Mat> {
    for s in inputs {
        s.validate()?;
    }
    let mut u = Mat::zeros(inputs.len(), t.len());
    for (i, &ti) in t.iter().enumerate() {
        u.set_column(i, &eval_input(inputs, ti)?);
    }
    Ok(u)
}

/// Implicit midpoint recurrence for `E ẋ = A x + B u`, `y = C x + D u`:
/// `(E/dt − A/2) x⁺ = (E/dt + A/2) x + B (u + u⁺)/2`.
#[allow(clippy::too_many_arguments)]
fn midpoint(
    e: &Mat,
    a: &Mat,
    b: &Mat,
    c: &Mat,
    d: &Mat,
    u: Mat,
    x0: &Vector,
    dt: f64,
    t: Vec<f64>,
) -> Result<Trajectory> {
    let n = a.nrows();
    let lhs = e / dt - a * 0.5;
    let rhs = e / dt + a * 0.5;
    let lu = LU::new(lhs);
    if n > 0 {
        let diag = lu.u().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if !(lo > 0.0) || lo / hi < 1e-15 {
            return Err(Error::Singular("midpoint step matrix"));
        }
    }
    let steps = t.len() - 1;
    let mut x = Mat::zeros(n, steps + 1);
    x.set_column(0, x0);
    for i in 0..steps {
        let ubar = (u.column(i) + u.column(i + 1)) * 0.5;
        let r = &rhs * x.column(i) + b * ubar;
        let next = lu.solve(&r).ok_or(Error::Singular("midpoint step matrix"))?;
        x.set_column(i + 1, &next);
    }
    let y = c * &x + d * &u;
    Ok(Trajectory { dt, t, u, x, y })
}

fn check_sim_args(n: usize, m: usize, inputs: &[InputSignal], x0: &Vector, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if inputs.len() != m {
        return Err(Error::dims(
            "simulate",
            format!("system has {m} inputs but {} signals were given", inputs.len()),
        ));
    }
    if x0.len() != n {
        return Err(Error::dims(
            "simulate",
            format!("system has {n} states but x0 has length {}", x0.len()),
        ));
    }
    Ok(())
}

/// Simulates a pH system with the implicit midpoint rule for `steps` steps,
/// producing `steps + 1` samples. Outputs are evaluated pointwise,
/// `yᵢ = C xᵢ + D uᵢ`.
pub fn simulate_midpoint(
    sys: &PhSystem,
    inputs: &[InputSignal],
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_sim_args(sys.n_states(), sys.n_ports(), inputs, x0, dt)?;
    let t = time_grid(dt, steps);
    let u = input_matrix(inputs, &t)?;
    midpoint(
        &sys.h,
        &sys.a_hat(),
        &sys.b_hat(),
        &sys.c_hat(),
        &sys.d_hat(),
        u,
        x0,
        dt,
        t,
    )
}

/// Midpoint integration of an unstructured continuous-time model.
pub fn simulate_lti_continuous(
    sys: &LtiSystem,
    inputs: &[InputSignal],
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_sim_args(sys.n_states(), sys.n_inputs(), inputs, x0, dt)?;
    let t = time_grid(dt, steps);
    let u = input_matrix(inputs, &t)?;
    let e = Mat::identity(sys.n_states(), sys.n_states());
    midpoint(&e, &sys.a, &sys.b, &sys.c, &sys.d, u, x0, dt, t)
}

/// Iterates a discrete-time model `x⁺ = A x + B u`, `y = C x + D u`.
pub fn simulate_lti_discrete(
    sys: &LtiSystem,
    inputs: &[InputSignal],
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_sim_args(sys.n_states(), sys.n_inputs(), inputs, x0, dt)?;
    let t = time_grid(dt, steps);
    let u = input_matrix(inputs, &t)?;
    let mut x = Mat::zeros(sys.n_states(), steps + 1);
    x.set_column(0, x0);
    for i in 0..steps {
        let next = &sys.a * x.column(i) + &sys.b * u.column(i);
        x.set_column(i + 1, &next);
    }
    let y = &sys.c * &x + &sys.d * &u;
    Ok(Trajectory { dt, t, u, x, y })
}

/// Dispatches on the model kind. For discrete-time models `dt` only labels
/// the time grid and must match the model's sampling step.
pub fn simulate_model(
    model: &Model,
    inputs: &[InputSignal],
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    match model {
        Model::Ph(sys) => simulate_midpoint(sys, inputs, x0, dt, steps),
        Model::Lti {
            sys,
            discrete_dt: None,
        } => simulate_lti_continuous(sys, inputs, x0, dt, steps),
        Model::Lti {
            sys,
            discrete_dt: Some(model_dt),
        } => {
            if (model_dt - dt).abs() > 1e-12 * dt {
                return Err(Error::InvalidArgument(format!(
                    "discrete-time model sampled at {model_dt} cannot be simulated with dt {dt}"
                )));
            }
            simulate_lti_discrete(sys, inputs, x0, dt, steps)
        }
    }
}

/// Per-step residual norms of the discrete pH state equation
/// `H (x⁺ − x)/dt − (J − R)(x⁺ + x)/2 − (G − P)(u⁺ + u)/2`.
pub fn discrete_state_residuals(sys: &PhSystem, traj: &Trajectory) -> Vec<f64> {
    let a = sys.a_hat();
    let b = sys.b_hat();
    (0..traj.n_samples().saturating_sub(1))
        .map(|i| {
            let dx = (traj.x.column(i + 1) - traj.x.column(i)) / traj.dt;
            let xm = (traj.x.column(i + 1) + traj.x.column(i)) * 0.5;
            let um = (traj.u.column(i + 1) + traj.u.column(i)) * 0.5;
            (&sys.h * dx - &a * xm - &b * um).norm()
        })
        .collect()
}

/// Adds i.i.d. `N(0, stddev²)` noise to states and outputs; inputs and time
/// stamps are left untouched.
pub fn add_noise(traj: &Trajectory, stddev: f64, seed: u64) -> Result<Trajectory> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise standard deviation must be non-negative, got {stddev}"
        )));
    }
    let mut out = traj.clone();
    if stddev == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, stddev).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.x.iter_mut().chain(out.y.iter_mut()) {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Writes `t,u_1..u_m,x_1..x_n,y_1..y_p` with 17 significant digits.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.n_inputs()).map(|i| format!("u_{i}")));
    header.extend((1..=traj.n_states()).map(|i| format!("x_{i}")));
    header.extend((1..=traj.n_outputs()).map(|i| format!("y_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (k, &t) in traj.t.iter().enumerate() {
        let (u, x, y) = (traj.u.column(k), traj.x.column(k), traj.y.column(k));
        let row = std::iter::once(t)
            .chain(u.iter().copied())
            .chain(x.iter().copied())
            .chain(y.iter().copied())
            .map(|v| format!("{v:.16e}"));
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"t") {
        return Err(Error::parse(path, "first column must be 't'"));
    }
    let count = |prefix: &str| names.iter().filter(|n| n.starts_with(prefix)).count();
    let (m, n, p) = (count("u_"), count("x_"), count("y_"));
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=m).map(|i| format!("u_{i}")));
    expected.extend((1..=n).map(|i| format!("x_{i}")));
    expected.extend((1..=p).map(|i| format!("y_{i}")));
    if names != expected {
        return Err(Error::parse(
            path,
            format!("header must be {}, got {}", expected.join(","), names.join(",")),
        ));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
        rows.push(row);
    }
    let k = rows.len();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let block = |offset: usize, size: usize| Mat::from_fn(size, k, |i, j| rows[j][offset + i]);
    let traj = Trajectory {
        dt: (t[k - 1] - t[0]) / (k - 1) as f64,
        u: block(1, m),
        x: block(1 + m, n),
        y: block(1 + m + n, p),
        t,
    };
    traj.check()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::msd_builder;
    use nalgebra::dmatrix;

    fn oscillator() -> PhSystem {
        PhSystem::new(
            Mat::identity(2, 2),
            dmatrix![0.0, 1.0; -1.0, 0.0],
            Mat::zeros(2, 2),
            Mat::zeros(2, 0),
            Mat::zeros(2, 0),
            Mat::zeros(0, 0),
            Mat::zeros(0, 0),
        )
        .unwrap()
    }

    #[test]
    fn input_signal_values() {
        assert_eq!(InputSignal::TrainingExpSin.eval(0.0).unwrap(), 0.0);
        assert_eq!(InputSignal::TrainingExpCos.eval(0.0).unwrap(), 1.0);
        let t = std::f64::consts::PI.sqrt();
        assert!(InputSignal::TrainingExpSin.eval(t).unwrap().abs() < 1e-15);
        assert_eq!(InputSignal::Zero.eval(3.0).unwrap(), 0.0);

        let table = InputSignal::Table {
            times: vec![0.0, 1.0, 2.0],
            values: vec![0.0, 2.0, 0.0],
        };
        assert_eq!(table.eval(0.5).unwrap(), 1.0);
        assert_eq!(table.eval(2.0).unwrap(), 0.0);
        assert!(matches!(table.eval(2.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn zero_input_zero_state() {
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let traj = simulate_midpoint(&sys, &[InputSignal::Zero], &Vector::zeros(6), 0.04, 50).unwrap();
        assert_eq!(traj.n_samples(), 51);
        assert!(traj.x.iter().all(|v| *v == 0.0));
        assert!(traj.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conserves_energy_without_dissipation() {
        let sys = oscillator();
        let x0 = Vector::from_vec(vec![1.0, 0.0]);
        let traj = simulate_midpoint(&sys, &[], &x0, 0.1, 1000).unwrap();
        for col in traj.x.column_iter() {
            let e = sys.energy(&col.into_owned());
            assert!((e - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrence_satisfies_implicit_form() {
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let traj = simulate_midpoint(
            &sys,
            &[InputSignal::TrainingExpSin],
            &Vector::zeros(6),
            1.0 / 25.0,
            100,
        )
        .unwrap();
        assert!(discrete_state_residuals(&sys, &traj).iter().all(|r| *r <= 1e-10));
        traj.check().unwrap();
    }

    #[test]
    fn argument_errors() {
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let x0 = Vector::zeros(6);
        assert!(simulate_midpoint(&sys, &[InputSignal::Zero], &x0, 0.0, 10).is_err());
        assert!(simulate_midpoint(&sys, &[], &x0, 0.1, 10).is_err());
        assert!(simulate_midpoint(&sys, &[InputSignal::Zero], &Vector::zeros(5), 0.1, 10).is_err());
    }

    #[test]
    fn noise_properties() {
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let traj = simulate_midpoint(
            &sys,
            &[InputSignal::TrainingExpSin],
            &Vector::zeros(6),
            0.04,
            99,
        )
        .unwrap();
        assert_eq!(add_noise(&traj, 0.0, 1).unwrap(), traj);
        let a = add_noise(&traj, 1e-4, 17).unwrap();
        let b = add_noise(&traj, 1e-4, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.u, traj.u);
        assert_eq!(a.t, traj.t);
        let diff: Vec<f64> = (&a.x - &traj.x).iter().copied().collect();
        assert_eq!(diff.len(), 600);
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diff.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.8e-4..=1.2e-4).contains(&sd), "sample stddev {sd}");
        assert!(add_noise(&traj, -1.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = msd_builder(2, 1.0, 1.0, 0.5, 2).unwrap();
        let traj = simulate_midpoint(
            &sys,
            &[InputSignal::TrainingExpSin, InputSignal::TrainingExpCos],
            &Vector::zeros(4),
            0.01,
            20,
        )
        .unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,u_1,u_2,x_1,x_2,x_3,x_4,y_1,y_2\n"));
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.x, traj.x);
        assert_eq!(back.u, traj.u);
        assert_eq!(back.y, traj.y);
        assert!((back.dt - traj.dt).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "time,x_1\n0,1\n1,2\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Parse { .. })));
    }
}
