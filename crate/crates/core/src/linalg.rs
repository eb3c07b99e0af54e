//! Dense matrix primitives: symmetric/skew splits, projection onto the PSD
//! cone, truncated SVD, pseudoinverse and the weighted Frobenius semi-norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff used whenever a caller does not pick one.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-12;

/// Eigenvalue threshold for PSD membership checks.
pub const PSD_TOL: f64 = 1e-10;

pub(crate) fn ensure_square(a: &Mat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn sym(a: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    Ok((a + a.transpose()) * 0.5)
}

/// Skew-symmetric part `(A − Aᵀ)/2`.
pub fn skew(a: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    Ok((a - a.transpose()) * 0.5)
}

/// Eigendecomposition of the symmetric part of `a` with eigenvalues sorted
/// in descending order.
pub fn sym_eigen(a: &Mat) -> Result<(Vector, Mat)> {
    let s = sym(a)?;
    let n = s.nrows();
    if n == 0 {
        return Ok((Vector::zeros(0), Mat::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &Mat) -> Result<f64> {
    let (values, _) = sym_eigen(a)?;
    Ok(values.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Nearest symmetric positive semidefinite matrix to `Sym(a)` in the
/// Frobenius norm, obtained by clipping negative eigenvalues.
pub fn psd_project(a: &Mat) -> Result<Mat> {
    let (values, vectors) = sym_eigen(a)?;
    let n = values.len();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let mut scaled = vectors.clone();
    for (k, &lambda) in values.iter().enumerate() {
        scaled.column_mut(k).scale_mut(lambda.max(0.0));
    }
    let out = &scaled * vectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Rank-revealing singular value decomposition `A ≈ U·diag(S)·Vᵀ` holding
/// only the retained singular triplets.
#[derive(Debug, Clone)]
pub struct SkinnySvd {
    pub u: Mat,
    pub s: Vector,
    pub v: Mat,
}

impl SkinnySvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (k, &sigma) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(sigma);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD with singular values `σ ≤ tol·σ₁` discarded.
pub fn skinny_svd(a: &Mat, truncation_tol: f64) -> Result<SkinnySvd> {
    if !(truncation_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation tolerance must be non-negative, got {truncation_tol}"
        )));
    }
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return Ok(SkinnySvd {
            u: Mat::zeros(n, 0),
            s: Vector::zeros(0),
            v: Mat::zeros(m, 0),
        });
    }
    // nalgebra 0.35 returns inconsistent factors for some exactly
    // rank-deficient inputs, so the decomposition itself comes from faer
    let fm = faer::Mat::<f64>::from_fn(n, m, |i, j| a[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|_| Error::InvalidArgument("SVD did not converge".into()))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = n.min(m);
    let u_full = Mat::from_fn(n, k, |i, j| fu[(i, j)]);
    let v_full = Mat::from_fn(m, k, |i, j| fv[(i, j)]);
    let s_full = Vector::from_fn(k, |i, _| fs[i]);
    let mut order: Vec<usize> = (0..s_full.len()).collect();
    order.sort_by(|&i, &j| s_full[j].total_cmp(&s_full[i]));
    let sigma_max = order.first().map(|&i| s_full[i]).unwrap_or(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| s_full[i] > 0.0 && s_full[i] > truncation_tol * sigma_max)
        .collect();
    let r = kept.len();
    let mut u = Mat::zeros(n, r);
    let mut v = Mat::zeros(m, r);
    let mut s = Vector::zeros(r);
    for (k, &i) in kept.iter().enumerate() {
        u.set_column(k, &u_full.column(i));
        v.set_column(k, &v_full.column(i));
        s[k] = s_full[i];
    }
    Ok(SkinnySvd { u, s, v })
}

/// Moore–Penrose pseudoinverse via the truncated SVD.
pub fn pinv(a: &Mat, truncation_tol: f64) -> Result<Mat> {
    let svd = skinny_svd(a, truncation_tol)?;
    let mut v_scaled = svd.v.clone();
    for (k, &sigma) in svd.s.iter().enumerate() {
        v_scaled.column_mut(k).scale_mut(1.0 / sigma);
    }
    Ok(v_scaled * svd.u.transpose())
}

/// `sqrt(trace(Aᵀ Ω A))` for a symmetric PSD weight `Ω`.
pub fn weighted_fro_norm(a: &Mat, omega: &Mat) -> Result<f64> {
    ensure_square(omega)?;
    if omega.nrows() != a.nrows() {
        return Err(Error::dims(
            "weighted_fro_norm",
            format!("Omega is {0}x{0} but A has {1} rows", omega.nrows(), a.nrows()),
        ));
    }
    if (omega - omega.transpose()).amax() > PSD_TOL * omega.amax().max(1.0) {
        return Err(Error::InvalidArgument("Omega is not symmetric".into()));
    }
    let min_eig = min_sym_eigenvalue(omega)?;
    if min_eig < -PSD_TOL {
        return Err(Error::NotPsd { min_eig });
    }
    let value = (a.transpose() * omega * a).trace();
    Ok(value.max(0.0).sqrt())
}

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    ensure_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum (−∞ for an empty matrix).
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest eigenvalue modulus (0 for an empty matrix).
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

pub(crate) fn is_skew(a: &Mat, tol: f64) -> bool {
    a.is_square() && (a + a.transpose()).amax() <= tol * a.amax().max(1.0)
}

pub(crate) fn is_symmetric(a: &Mat, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol * a.amax().max(1.0)
}

/// Stacks `top` over `bottom`; both must have the same column count.
pub(crate) fn vstack(top: &Mat, bottom: &Mat) -> Mat {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

/// Assembles `[[a, b], [c, d]]`.
pub(crate) fn block2x2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut out = Mat::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}
