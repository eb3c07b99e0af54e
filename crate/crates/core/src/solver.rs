//! Fast projected gradient method for
//! `min ‖Z − (J − R) T‖_F` over skew `J` and PSD `R`.
//!
//! For fixed `R` the optimal `J` has a closed form, so the iteration runs on
//! `R` alone. Every accepted iterate is the pair `(J(R), R)` with `J(R)` the
//! skew Procrustes solution at `R`.

use serde::{Deserialize, Serialize};

use crate::data::DataMatrices;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, DEFAULT_TRUNCATION_TOL};
use crate::procrustes::{self, JrPair, SkewProcrustes};

/// Armijo constant of the backtracking safeguard.
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backtracking {
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for Backtracking {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub alpha1: f64,
    pub restart: bool,
    pub backtracking: Backtracking,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            max_iters: 5000,
            alpha1: 0.1,
            restart: true,
            backtracking: Backtracking::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha1 > 0.0 && self.alpha1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "solver alpha1 must lie in (0, 1), got {}",
                self.alpha1
            )));
        }
        let b = self.backtracking;
        if !(b.shrink > 0.0 && b.shrink < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "backtracking shrink factor must lie in (0, 1), got {}",
                b.shrink
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Stalled,
}

/// One entry per accepted iterate; entry 0 is the starting pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖Z − (J−R)T‖_F / ‖Z‖_F`
    pub f: f64,
    /// `‖Tᵀ(Z − (J−R)T)‖_F / ‖TᵀZ‖_F`
    pub f_t: f64,
    /// Whether this iterate came from a restart step.
    pub restart: bool,
    /// Stopping metric against the previous iterate (absent for entry 0).
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub termination: Termination,
    pub restarts: usize,
    pub lipschitz: f64,
    pub rank: usize,
    pub history: Vec<IterationRecord>,
}

impl SolverReport {
    pub fn final_f(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.f)
    }

    pub fn final_f_t(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.f_t)
    }
}

/// `Q T Tᵀ − Z₂ Tᵀ`, the derivative of `½‖Z₂ − R T‖²_F` at `R = Q`.
pub fn grad_psd_part(q: &Mat, t: &Mat, z2: &Mat) -> Result<Mat> {
    linalg::ensure_square(q)?;
    if q.ncols() != t.nrows() || z2.shape() != (q.nrows(), t.ncols()) {
        return Err(Error::dims(
            "grad_psd_part",
            format!(
                "Q is {:?}, T is {:?}, Z2 is {:?}",
                q.shape(),
                t.shape(),
                z2.shape()
            ),
        ));
    }
    Ok((q * t - z2) * t.transpose())
}

fn relative_change(prev: &Mat, next: &Mat) -> f64 {
    let delta = (next - prev).norm();
    let denom = next.norm();
    if denom > 0.0 {
        delta / denom
    } else {
        delta
    }
}

/// `‖ΔJ‖_F/‖J_next‖_F + ‖ΔR‖_F/‖R_next‖_F`. A zero denominator contributes
/// the absolute change instead.
pub fn stopping_metric(prev: &JrPair, next: &JrPair) -> f64 {
    relative_change(&prev.j, &next.j) + relative_change(&prev.r, &next.r)
}

/// Objective evaluation in the coordinates of the row space of `T`.
///
/// With `T = V₁Σ₁W₁ᵀ`, `‖Z − MT‖² = ‖ZW₁ − M V₁Σ₁‖² + ‖Z(I − W₁W₁ᵀ)‖²`, so
/// all per-iteration work happens on `ñ × r` matrices.
struct Compressed {
    fac: SkewProcrustes,
    /// `Z W₁`
    zw: Mat,
    /// `V₁ Σ₁`, which satisfies `T Tᵀ = T_c T_cᵀ`
    tc: Mat,
    /// `Σ₁ V₁ᵀ`
    left: Mat,
    offset_f: f64,
    offset_ft: f64,
    norm_z: f64,
    norm_tz: f64,
}

impl Compressed {
    fn new(z: &Mat, t: &Mat) -> Result<Self> {
        let fac = SkewProcrustes::new(t, DEFAULT_TRUNCATION_TOL)?;
        let zw = z * fac.w1();
        let mut tc = fac.v1().clone();
        for (k, &s) in fac.sigma().iter().enumerate() {
            tc.column_mut(k).scale_mut(s);
        }
        let left = tc.transpose();
        let z_perp = z - &zw * fac.w1().transpose();
        let offset_f = z_perp.norm_squared();
        let offset_ft = (&left * &z_perp).norm_squared();
        let norm_z = z.norm();
        let norm_tz = (&left * z).norm();
        Ok(Self {
            fac,
            zw,
            tc,
            left,
            offset_f,
            offset_ft,
            norm_z,
            norm_tz,
        })
    }

    fn skew_solve(&self, r: &Mat) -> Mat {
        self.fac.solve_projected(&(&self.zw + r * &self.tc))
    }

    fn residual(&self, j: &Mat, r: &Mat) -> Mat {
        &self.zw - (j - r) * &self.tc
    }

    /// Squared unweighted objective.
    fn f_sq(&self, j: &Mat, r: &Mat) -> f64 {
        self.offset_f + self.residual(j, r).norm_squared()
    }

    fn record(&self, pair: &JrPair, iteration: usize, restart: bool, step: Option<f64>) -> IterationRecord {
        let res = self.residual(&pair.j, &pair.r);
        let f_sq = self.offset_f + res.norm_squared();
        let ft_sq = self.offset_ft + (&self.left * &res).norm_squared();
        let rel = |v: f64, d: f64| if d > 0.0 { v.sqrt() / d } else { v.sqrt() };
        IterationRecord {
            iteration,
            f: rel(f_sq, self.norm_z),
            f_t: rel(ft_sq, self.norm_tz),
            restart,
            step,
        }
    }

    /// Gradient of `½‖Z₂ − RT‖²` at `q` with `Z₂ = J T − Z`, in compressed
    /// coordinates.
    fn gradient(&self, q: &Mat, j: &Mat) -> Mat {
        let z2 = j * &self.tc - &self.zw;
        (q * &self.tc - z2) * self.tc.transpose()
    }
}

fn project(m: &Mat) -> Mat {
    linalg::psd_project(m).expect("square by construction")
}

/// Runs the fast gradient iteration from `r0`.
pub fn solve_phdmd(data: &DataMatrices, r0: &Mat, opts: &SolverOptions) -> Result<(JrPair, SolverReport)> {
    solve_zt(&data.z, &data.t, r0, opts)
}

/// Starting dissipation matrix used when the caller has none: the `R` of
/// the rank-deficient weighted initialisation.
pub fn default_initial_r(z: &Mat, t: &Mat) -> Result<Mat> {
    Ok(procrustes::init_rank_deficient(z, t)?.r)
}

/// [`solve_phdmd`] on raw data matrices.
pub fn solve_zt(z: &Mat, t: &Mat, r0: &Mat, opts: &SolverOptions) -> Result<(JrPair, SolverReport)> {
    opts.validate()?;
    if z.shape() != t.shape() {
        return Err(Error::dims(
            "solve_phdmd",
            format!("Z is {:?} but T is {:?}", z.shape(), t.shape()),
        ));
    }
    let n = z.nrows();
    if r0.shape() != (n, n) {
        return Err(Error::dims(
            "solve_phdmd",
            format!("R0 is {:?} but the data have {n} rows", r0.shape()),
        ));
    }
    if !procrustes::is_psd(r0)? {
        let min_eig = linalg::min_sym_eigenvalue(r0)?;
        return Err(Error::NotPsd { min_eig });
    }
    let r0 = linalg::sym(r0)?;

    let cz = Compressed::new(z, t)?;
    let rank = cz.fac.rank();
    let lipschitz = cz.fac.sigma().get(0).map_or(0.0, |s| s * s);

    let mut current = JrPair {
        j: cz.skew_solve(&r0),
        r: r0,
    };
    let mut f_cur = cz.f_sq(&current.j, &current.r);
    let mut history = vec![cz.record(&current, 0, false, None)];
    let mut report = SolverReport {
        iterations: 0,
        termination: Termination::MaxIters,
        restarts: 0,
        lipschitz,
        rank,
        history: Vec::new(),
    };
    if rank == 0 {
        // T = 0: every pair gives the same objective
        report.termination = Termination::Converged;
        report.history = history;
        return Ok((current, report));
    }
    let q_ratio = cz.fac.sigma()[rank - 1].powi(2) / lipschitz;

    let mut q = current.r.clone();
    let mut alpha = opts.alpha1;
    for k in 1..=opts.max_iters {
        let grad = cz.gradient(&q, &current.j);
        let r_next = project(&(&q - grad / lipschitz));
        let j_next = cz.skew_solve(&r_next);
        let f_next = cz.f_sq(&j_next, &r_next);
        let slack = 1e-12 * f_cur + 64.0 * f64::EPSILON * cz.norm_z.powi(2).max(f64::MIN_POSITIVE);

        let (next, f_new, restarted) = if opts.restart && f_next > f_cur + slack {
            report.restarts += 1;
            match restart_step(&cz, &current, f_cur, lipschitz, opts) {
                Some((pair, f)) => {
                    alpha = opts.alpha1;
                    q = pair.r.clone();
                    (pair, f, true)
                }
                None => {
                    report.termination = Termination::Stalled;
                    break;
                }
            }
        } else {
            let alpha_next = 0.5
                * (q_ratio - alpha * alpha
                    + ((q_ratio - alpha * alpha).powi(2) + 4.0 * alpha * alpha).sqrt());
            let beta = alpha * (1.0 - alpha) / (alpha * alpha + alpha_next);
            q = &r_next + (&r_next - &current.r) * beta;
            alpha = alpha_next;
            (JrPair { j: j_next, r: r_next }, f_next, false)
        };

        let metric = stopping_metric(&current, &next);
        history.push(cz.record(&next, k, restarted, Some(metric)));
        report.iterations = k;
        current = next;
        f_cur = f_new;
        if metric <= opts.epsilon {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.history = history;
    Ok((current, report))
}

/// Projected gradient step from the current iterate with Armijo
/// backtracking on `½‖Z₂ − RT‖²` (with `J` held fixed). Returns `None` when
/// no sufficient decrease is found.
fn restart_step(cz: &Compressed, current: &JrPair, f_cur: f64, lipschitz: f64, opts: &SolverOptions) -> Option<(JrPair, f64)> {
    let grad = cz.gradient(&current.r, &current.j);
    let mut step = 1.0 / lipschitz;
    let g_cur = 0.5 * f_cur;
    for _ in 0..=opts.backtracking.max_halvings {
        let r_try = project(&(&current.r - &grad * step));
        let delta_sq = (&r_try - &current.r).norm_squared();
        let g_try = 0.5 * cz.f_sq(&current.j, &r_try);
        if g_try <= g_cur - ARMIJO / step * delta_sq && delta_sq > 0.0 {
            let j_try = cz.skew_solve(&r_try);
            let f_try = cz.f_sq(&j_try, &r_try);
            return Some((JrPair { j: j_try, r: r_try }, f_try));
        }
        step *= opts.backtracking.shrink;
    }
    None
}
