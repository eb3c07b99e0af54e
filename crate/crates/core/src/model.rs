//! Continuous-time port-Hamiltonian systems in energy-weighted form
//!
//! ```text
//! H ẋ = (J − R) x + (G − P) u
//!   y = (G + P)ᵀ x + (S − N) u
//! ```
//!
//! with `H` SPD, `J`, `N` skew-symmetric and `W = [[R, P], [Pᵀ, S]]` PSD.

use std::fmt;

use nalgebra::linalg::{Cholesky, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block2x2, Mat, Vector};

/// Default tolerance for structural checks.
pub const STRUCTURE_TOL: f64 = 1e-10;

/// A single failed structural check reported by [`PhSystem::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Dimension(String),
    HNotSymmetric,
    HNotSpd { min_eig: f64 },
    JNotSkew,
    NNotSkew,
    WNotPsd { min_eig: f64 },
    NonFinite(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(d) => write!(f, "dimension mismatch: {d}"),
            Violation::HNotSymmetric => write!(f, "H not symmetric"),
            Violation::HNotSpd { min_eig } => write!(f, "H not SPD (min eigenvalue {min_eig:.3e})"),
            Violation::JNotSkew => write!(f, "J not skew-symmetric"),
            Violation::NNotSkew => write!(f, "N not skew-symmetric"),
            Violation::WNotPsd { min_eig } => write!(f, "W not PSD (min eigenvalue {min_eig:.3e})"),
            Violation::NonFinite(block) => write!(f, "{block} has non-finite entries"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhSystem {
    pub h: Mat,
    pub j: Mat,
    pub r: Mat,
    pub g: Mat,
    pub p: Mat,
    pub s: Mat,
    pub n: Mat,
}

/// Unstructured state-space realization `ẋ = Ax + Bu, y = Cx + Du` (or the
/// discrete-time shift analogue).
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && c.ncols() == n
            && d.nrows() == c.nrows()
            && d.ncols() == b.ncols();
        if !ok {
            return Err(Error::dims(
                "LtiSystem",
                format!(
                    "A {:?}, B {:?}, C {:?}, D {:?}",
                    a.shape(),
                    b.shape(),
                    c.shape(),
                    d.shape()
                ),
            ));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

impl PhSystem {
    /// Builds a system after checking block shapes. Structure is not checked
    /// here; see [`PhSystem::validate`].
    pub fn new(h: Mat, j: Mat, r: Mat, g: Mat, p: Mat, s: Mat, n: Mat) -> Result<Self> {
        let sys = Self { h, j, r, g, p, s, n };
        let dims = sys.dimension_violations();
        if !dims.is_empty() {
            return Err(Error::Structure(dims));
        }
        Ok(sys)
    }

    /// Like [`PhSystem::new`] but rejects anything failing `validate(tol)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new_validated(
        h: Mat,
        j: Mat,
        r: Mat,
        g: Mat,
        p: Mat,
        s: Mat,
        n: Mat,
        tol: f64,
    ) -> Result<Self> {
        let sys = Self::new(h, j, r, g, p, s, n)?;
        let violations = sys.validate(tol);
        if violations.is_empty() {
            Ok(sys)
        } else {
            Err(Error::Structure(violations))
        }
    }

    /// Splits the `(n+m)×(n+m)` structure matrices of the stacked
    /// formulation into the system blocks:
    /// `𝒥 = [[J, G], [−Gᵀ, N]]`, `ℛ = [[R, P], [Pᵀ, S]]`.
    pub fn from_structure(h: Mat, jcal: &Mat, rcal: &Mat) -> Result<Self> {
        let n = h.nrows();
        let total = jcal.nrows();
        if total < n || jcal.shape() != (total, total) || rcal.shape() != (total, total) {
            return Err(Error::dims(
                "from_structure",
                format!(
                    "H {:?}, J {:?}, R {:?}",
                    h.shape(),
                    jcal.shape(),
                    rcal.shape()
                ),
            ));
        }
        let m = total - n;
        let j = jcal.view((0, 0), (n, n)).into_owned();
        let g = jcal.view((0, n), (n, m)).into_owned();
        let nn = jcal.view((n, n), (m, m)).into_owned();
        let r = rcal.view((0, 0), (n, n)).into_owned();
        let p = rcal.view((0, n), (n, m)).into_owned();
        let s = rcal.view((n, n), (m, m)).into_owned();
        Self::new(h, j, r, g, p, s, nn)
    }

    /// Inverse of [`PhSystem::from_structure`].
    pub fn structure(&self) -> (Mat, Mat) {
        let jcal = block2x2(&self.j, &self.g, &-self.g.transpose(), &self.n);
        (jcal, self.w())
    }

    pub fn n_states(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_ports(&self) -> usize {
        self.g.ncols()
    }

    /// Dissipation block `W = [[R, P], [Pᵀ, S]]`.
    pub fn w(&self) -> Mat {
        block2x2(&self.r, &self.p, &self.p.transpose(), &self.s)
    }

    /// `J − R`
    pub fn a_hat(&self) -> Mat {
        &self.j - &self.r
    }

    /// `G − P`
    pub fn b_hat(&self) -> Mat {
        &self.g - &self.p
    }

    /// `(G + P)ᵀ`
    pub fn c_hat(&self) -> Mat {
        (&self.g + &self.p).transpose()
    }

    /// `S − N`
    pub fn d_hat(&self) -> Mat {
        &self.s - &self.n
    }

    /// Hamiltonian `½ xᵀ H x`.
    pub fn energy(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x))
    }

    fn dimension_violations(&self) -> Vec<Violation> {
        let n = self.h.nrows();
        let m = self.g.ncols();
        let mut out = Vec::new();
        let mut check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                out.push(Violation::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        };
        check("H", self.h.shape(), (n, n));
        check("J", self.j.shape(), (n, n));
        check("R", self.r.shape(), (n, n));
        check("G", self.g.shape(), (n, m));
        check("P", self.p.shape(), (n, m));
        check("S", self.s.shape(), (m, m));
        check("N", self.n.shape(), (m, m));
        out
    }

    /// All structural violations at tolerance `tol`; empty iff the system is
    /// a valid pH realization.
    pub fn validate(&self, tol: f64) -> Vec<Violation> {
        let mut out = self.dimension_violations();
        if !out.is_empty() {
            return out;
        }
        for (name, block) in [
            ("H", &self.h),
            ("J", &self.j),
            ("R", &self.r),
            ("G", &self.g),
            ("P", &self.p),
            ("S", &self.s),
            ("N", &self.n),
        ] {
            if block.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite(name));
            }
        }
        if !out.is_empty() {
            return out;
        }
        if !linalg::is_symmetric(&self.h, tol) {
            out.push(Violation::HNotSymmetric);
        }
        let h_min = linalg::min_sym_eigenvalue(&self.h).unwrap_or(f64::NAN);
        if !(h_min > 0.0) {
            out.push(Violation::HNotSpd { min_eig: h_min });
        }
        if !linalg::is_skew(&self.j, tol) {
            out.push(Violation::JNotSkew);
        }
        if !linalg::is_skew(&self.n, tol) {
            out.push(Violation::NNotSkew);
        }
        let w = self.w();
        let w_sym_ok = linalg::is_symmetric(&w, tol);
        let w_min = if w.nrows() == 0 {
            0.0
        } else {
            linalg::min_sym_eigenvalue(&w).unwrap_or(f64::NAN)
        };
        if !w_sym_ok || !(w_min >= -tol) {
            out.push(Violation::WNotPsd { min_eig: w_min });
        }
        out
    }

    /// Unstructured realization `A = H⁻¹(J−R)`, `B = H⁻¹(G−P)`,
    /// `C = (G+P)ᵀ`, `D = S−N`.
    pub fn to_lti(&self) -> Result<LtiSystem> {
        let n = self.n_states();
        let rhs = {
            let mut rhs = Mat::zeros(n, n + self.n_ports());
            rhs.view_mut((0, 0), (n, n)).copy_from(&self.a_hat());
            rhs.view_mut((0, n), (n, self.n_ports()))
                .copy_from(&self.b_hat());
            rhs
        };
        let sol = solve_spd_or_lu(&self.h, &rhs, "H")?;
        let a = sol.view((0, 0), (n, n)).into_owned();
        let b = sol.view((0, n), (n, self.n_ports())).into_owned();
        LtiSystem::new(a, b, self.c_hat(), self.d_hat())
    }

    /// Spectral abscissa of `H⁻¹(J−R)`.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        linalg::spectral_abscissa(&self.to_lti()?.a)
    }
}

/// Solves `M X = B`, preferring a Cholesky factorisation and falling back to
/// partial-pivot LU. Errors when `M` is numerically singular.
pub(crate) fn solve_spd_or_lu(m: &Mat, b: &Mat, what: &'static str) -> Result<Mat> {
    if m.nrows() == 0 {
        return Ok(Mat::zeros(0, b.ncols()));
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        let l = chol.l_dirty();
        let diag = l.diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if lo > 0.0 && (lo / hi).powi(2) > 1e-15 {
            return Ok(chol.solve(b));
        }
    }
    lu_solve(m, b, what)
}

pub(crate) fn lu_solve(m: &Mat, b: &Mat, what: &'static str) -> Result<Mat> {
    let lu = LU::new(m.clone());
    let u = lu.u();
    let diag = u.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if !(lo > 0.0) || lo / hi < 1e-15 {
        return Err(Error::Singular(what));
    }
    lu.solve(b).ok_or(Error::Singular(what))
}

/// Mass-spring-damper chain with `n_masses` identical masses `mass`, springs
/// `stiffness` (the last one attached to a wall) and dampers `damping`.
///
/// The state interleaves `(q_i, p_i)` per mass, so `n = 2·n_masses`. Port 1
/// forces mass 1; with `n_ports == 2` a second collocated port forces mass 2.
pub fn msd_builder(
    n_masses: usize,
    mass: f64,
    stiffness: f64,
    damping: f64,
    n_ports: usize,
) -> Result<PhSystem> {
    if n_masses == 0 {
        return Err(Error::InvalidArgument("n_masses must be at least 1".into()));
    }
    if !(mass > 0.0 && stiffness > 0.0 && damping >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need m > 0, k > 0, c >= 0; got m={mass}, k={stiffness}, c={damping}"
        )));
    }
    if !(n_ports == 1 || n_ports == 2) {
        return Err(Error::InvalidArgument(format!(
            "n_ports must be 1 or 2, got {n_ports}"
        )));
    }
    if n_ports == 2 && n_masses < 2 {
        return Err(Error::InvalidArgument(
            "a second port needs at least two masses".into(),
        ));
    }
    let nm = n_masses;
    let n = 2 * nm;
    let masses = vec![mass; nm];
    let springs = vec![stiffness; nm];
    let dampers = vec![damping; nm];

    // stiffness matrix of the position coordinates
    let mut k = Mat::zeros(nm, nm);
    for i in 0..nm {
        k[(i, i)] += springs[i];
        if i > 0 {
            k[(i, i)] += springs[i - 1];
        }
        if i + 1 < nm {
            k[(i, i + 1)] = -springs[i];
            k[(i + 1, i)] = -springs[i];
        }
    }
    let q = |i: usize| 2 * i;
    let p = |i: usize| 2 * i + 1;

    let mut h = Mat::zeros(n, n);
    let mut j = Mat::zeros(n, n);
    let mut r = Mat::zeros(n, n);
    for a in 0..nm {
        h[(p(a), p(a))] = 1.0 / masses[a];
        r[(p(a), p(a))] = dampers[a] / (masses[a] * masses[a]);
        for b in 0..nm {
            h[(q(a), q(b))] = k[(a, b)];
            // H·A with q̇ = p/m, ṗ = −Kq − c p/m: the (q_a, p_b) entry is K_ab/m_b
            let v = k[(a, b)] / masses[b];
            j[(q(a), p(b))] = v;
            j[(p(b), q(a))] = -v;
        }
    }
    let mut g = Mat::zeros(n, n_ports);
    for port in 0..n_ports {
        g[(p(port), port)] = 1.0 / masses[port];
    }
    let zeros_nm = Mat::zeros(n, n_ports);
    let zeros_mm = Mat::zeros(n_ports, n_ports);
    PhSystem::new_validated(
        h,
        j,
        r,
        g,
        zeros_nm,
        zeros_mm.clone(),
        zeros_mm,
        STRUCTURE_TOL,
    )
}
