//! Objective values, trajectory errors, discrete dissipation residuals and
//! frequency-sampled transfer function norms.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrices;
use crate::error::{Error, Result};
use crate::io::Model;
use crate::linalg::{self, Mat, DEFAULT_TRUNCATION_TOL};
use crate::model::{LtiSystem, PhSystem};
use crate::procrustes::JrPair;
use crate::simulate::Trajectory;

fn check_pair(data: &DataMatrices, pair: &JrPair) -> Result<()> {
    let n = data.z.nrows();
    if pair.j.shape() != (n, n) || pair.r.shape() != (n, n) {
        return Err(Error::dims(
            "objective",
            format!(
                "J is {:?}, R is {:?}, data have {n} rows",
                pair.j.shape(),
                pair.r.shape()
            ),
        ));
    }
    Ok(())
}

fn residual(data: &DataMatrices, pair: &JrPair) -> Mat {
    &data.z - pair.combined() * &data.t
}

/// `‖Tᵀ A‖_F` evaluated as `‖Σ V_Tᵀ A‖_F` so that no `M × M` product is
/// formed.
fn t_weighted_norm(t: &Mat, a: &Mat) -> Result<f64> {
    let svd = linalg::skinny_svd(t, 0.0)?;
    let mut left = svd.u.transpose() * a;
    for (k, &s) in svd.s.iter().enumerate() {
        left.row_mut(k).scale_mut(s);
    }
    Ok(left.norm())
}

/// `‖Z − (J−R)T‖_F / ‖Z‖_F`
pub fn objective_f(data: &DataMatrices, pair: &JrPair) -> Result<f64> {
    check_pair(data, pair)?;
    let denom = data.z.norm();
    if denom == 0.0 {
        return Err(Error::ZeroNorm("‖Z‖_F"));
    }
    Ok(residual(data, pair).norm() / denom)
}

/// `‖Tᵀ(Z − (J−R)T)‖_F / ‖TᵀZ‖_F`
pub fn objective_ft(data: &DataMatrices, pair: &JrPair) -> Result<f64> {
    check_pair(data, pair)?;
    let denom = t_weighted_norm(&data.t, &data.z)?;
    if denom == 0.0 {
        return Err(Error::ZeroNorm("‖TᵀZ‖_F"));
    }
    Ok(t_weighted_norm(&data.t, &residual(data, pair))? / denom)
}

/// `ΔHᵢ − ȳᵢᵀūᵢ` per step, with `ΔHᵢ = (ℋ(x_{i+1}) − ℋ(xᵢ))/δt` and bars
/// denoting midpoint averages. Non-positive entries certify the discrete
/// dissipation inequality.
pub fn dissipation_residuals(h: &Mat, traj: &Trajectory) -> Result<Vec<f64>> {
    let k = traj.n_samples();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    if h.shape() != (traj.n_states(), traj.n_states()) {
        return Err(Error::dims(
            "dissipation_residuals",
            format!("H is {:?}, trajectory has {} states", h.shape(), traj.n_states()),
        ));
    }
    if traj.n_inputs() != traj.n_outputs() {
        return Err(Error::dims(
            "dissipation_residuals",
            format!("{} inputs but {} outputs", traj.n_inputs(), traj.n_outputs()),
        ));
    }
    let energy = |i: usize| 0.5 * traj.x.column(i).dot(&(h * traj.x.column(i)));
    Ok((0..k - 1)
        .map(|i| {
            let dh = (energy(i + 1) - energy(i)) / traj.dt;
            let ym = (traj.y.column(i + 1) + traj.y.column(i)) * 0.5;
            let um = (traj.u.column(i + 1) + traj.u.column(i)) * 0.5;
            dh - ym.dot(&um)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub rel_l2: f64,
    pub rel_linf: f64,
    /// Euclidean norm of the error at each sample.
    pub abs_error: Vec<f64>,
}

/// Relative ℓ² (Frobenius over all samples) and ℓ∞ (max entry) errors of
/// `y_test` against `y_ref`, columns being samples.
pub fn trajectory_error(y_ref: &Mat, y_test: &Mat) -> Result<ErrorSummary> {
    if y_ref.shape() != y_test.shape() {
        return Err(Error::dims(
            "trajectory_error",
            format!("reference is {:?}, test is {:?}", y_ref.shape(), y_test.shape()),
        ));
    }
    let diff = y_test - y_ref;
    let (l2, linf) = (y_ref.norm(), y_ref.amax());
    if l2 == 0.0 {
        return Err(Error::ZeroNorm("reference trajectory"));
    }
    Ok(ErrorSummary {
        rel_l2: diff.norm() / l2,
        rel_linf: diff.amax() / linf,
        abs_error: diff.column_iter().map(|c| c.norm()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualBound {
    /// `‖Z − (J−R)T‖_F`
    pub lhs: f64,
    /// `c · ‖Tᵀ(Z − (J−R)T)‖_F`
    pub rhs: f64,
    /// `‖T†‖_F`
    pub c: f64,
}

impl ResidualBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-12
    }
}

/// Bound of the unweighted residual by the weighted one; needs `T` with
/// full row rank.
pub fn residual_bound(data: &DataMatrices, pair: &JrPair) -> Result<ResidualBound> {
    check_pair(data, pair)?;
    let svd = linalg::skinny_svd(&data.t, DEFAULT_TRUNCATION_TOL)?;
    if svd.rank() < data.t.nrows() {
        return Err(Error::RankDeficient {
            rank: svd.rank(),
            rows: data.t.nrows(),
        });
    }
    let c = svd.s.iter().map(|s| 1.0 / (s * s)).sum::<f64>().sqrt();
    let res = residual(data, pair);
    Ok(ResidualBound {
        lhs: res.norm(),
        rhs: c * t_weighted_norm(&data.t, &res)?,
        c,
    })
}

type CMat = DMatrix<Complex64>;

/// `G(s) = C (sE − A)⁻¹ B + D`, covering both pH systems (`E = H`) and
/// continuous LTI systems (`E = I`).
#[derive(Debug, Clone)]
pub struct Descriptor {
    e: Mat,
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl Descriptor {
    pub fn from_ph(sys: &PhSystem) -> Self {
        Self {
            e: sys.h.clone(),
            a: sys.a_hat(),
            b: sys.b_hat(),
            c: sys.c_hat(),
            d: sys.d_hat(),
        }
    }

    pub fn from_lti(sys: &LtiSystem) -> Self {
        let n = sys.n_states();
        Self {
            e: Mat::identity(n, n),
            a: sys.a.clone(),
            b: sys.b.clone(),
            c: sys.c.clone(),
            d: sys.d.clone(),
        }
    }

    /// Discrete-time models have no transfer function on the imaginary axis.
    pub fn from_model(model: &Model) -> Result<Self> {
        match model {
            Model::Ph(sys) => Ok(Self::from_ph(sys)),
            Model::Lti {
                sys,
                discrete_dt: None,
            } => Ok(Self::from_lti(sys)),
            Model::Lti { .. } => Err(Error::InvalidArgument(
                "frequency response needs a continuous-time model".into(),
            )),
        }
    }

    pub fn io_dims(&self) -> (usize, usize) {
        (self.d.nrows(), self.d.ncols())
    }

    /// `G(iω)`
    pub fn eval(&self, omega: f64) -> Result<CMat> {
        let to_c = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
        let d = to_c(&self.d);
        if self.a.nrows() == 0 {
            return Ok(d);
        }
        let s = Complex64::new(0.0, omega);
        let pencil = self.e.map(|v| s * v) - to_c(&self.a);
        let lu = pencil.lu();
        let rhs = to_c(&self.b);
        let sol = lu
            .solve(&rhs)
            .ok_or(Error::Singular("iωE − A at a grid frequency"))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("iωE − A at a grid frequency"));
        }
        Ok(to_c(&self.c) * sol + d)
    }
}

/// `n` logarithmically spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "log grid needs 0 < lo < hi and at least 2 points, got [{lo}, {hi}] with {n}"
        )));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect())
}

/// Grid used when nothing else is requested: 400 points on `[1e-3, 1e3]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 400).expect("valid constants")
}

/// Sampled frequency response norms. Both are approximations from below of
/// the exact norms over the sampled band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledNorms {
    /// `max_k ‖G(iω_k)‖_F`
    pub h_inf_sampled: f64,
    /// `sqrt((1/π) ∫ ‖G(iω)‖²_F dω)` by the trapezoidal rule over the grid
    pub h2_sampled: f64,
    pub omega: Vec<f64>,
    pub magnitude: Vec<f64>,
}

fn sampled_norms(omega: &[f64], magnitude: Vec<f64>) -> SampledNorms {
    let h_inf_sampled = magnitude.iter().copied().fold(0.0, f64::max);
    let integral: f64 = omega
        .windows(2)
        .zip(magnitude.windows(2))
        .map(|(w, m)| 0.5 * (w[1] - w[0]) * (m[0] * m[0] + m[1] * m[1]))
        .sum();
    SampledNorms {
        h_inf_sampled,
        h2_sampled: (integral / std::f64::consts::PI).sqrt(),
        omega: omega.to_vec(),
        magnitude,
    }
}

fn check_grid(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::InvalidArgument("empty frequency grid".into()));
    }
    if omega.windows(2).any(|w| w[1] <= w[0]) || omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "frequency grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn transfer_eval(sys: &Descriptor, omega: &[f64]) -> Result<SampledNorms> {
    check_grid(omega)?;
    let magnitude = omega
        .iter()
        .map(|&w| sys.eval(w).map(|g| g.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(sampled_norms(omega, magnitude))
}

/// Sampled norms of the error system `G_a − G_b`.
pub fn transfer_error(a: &Descriptor, b: &Descriptor, omega: &[f64]) -> Result<SampledNorms> {
    check_grid(omega)?;
    if a.io_dims() != b.io_dims() {
        return Err(Error::dims(
            "transfer_error",
            format!("port dimensions {:?} and {:?} differ", a.io_dims(), b.io_dims()),
        ));
    }
    let magnitude = omega
        .iter()
        .map(|&w| Ok((a.eval(w)? - b.eval(w)?).norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(sampled_norms(omega, magnitude))
}
