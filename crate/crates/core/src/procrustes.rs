//! Closed-form structured least-squares solvers.
//!
//! Throughout, `T = V₁ Σ₁ W₁ᵀ` is the skinny SVD of the data matrix `T`.
//! Every solver only touches `Z` through `Z W₁`, which keeps the cost
//! independent of the snapshot count once that product is formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector, DEFAULT_TRUNCATION_TOL, PSD_TOL};

/// Skew-symmetric `J` and symmetric PSD `R` of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct JrPair {
    pub j: Mat,
    pub r: Mat,
}

/// Serializable summary of the structural state of a [`JrPair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub skew_defect: f64,
    pub r_symmetry_defect: f64,
    pub r_min_eigenvalue: f64,
}

impl JrPair {
    pub fn zeros(n: usize) -> Self {
        Self {
            j: Mat::zeros(n, n),
            r: Mat::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    /// `J − R`
    pub fn combined(&self) -> Mat {
        &self.j - &self.r
    }

    pub fn diagnostics(&self) -> PairDiagnostics {
        let n = self.dim();
        PairDiagnostics {
            skew_defect: (&self.j + self.j.transpose()).amax(),
            r_symmetry_defect: (&self.r - self.r.transpose()).amax(),
            r_min_eigenvalue: if n == 0 {
                0.0
            } else {
                linalg::min_sym_eigenvalue(&self.r).unwrap_or(f64::NAN)
            },
        }
    }

    /// True when `J` is skew and `R` symmetric PSD within `tol` (relative to
    /// the matrix scale for the symmetry checks).
    pub fn is_valid(&self, tol: f64) -> bool {
        let d = self.diagnostics();
        let scale_j = self.j.amax().max(1.0);
        let scale_r = self.r.amax().max(1.0);
        d.skew_defect <= tol * scale_j
            && d.r_symmetry_defect <= tol * scale_r
            && d.r_min_eigenvalue >= -tol * scale_r
    }
}

/// Best `(J, R)` with `J = −Jᵀ`, `R ⪰ 0` approximating `Z ≈ J − R`:
/// `J = Skew(Z)`, `R = P⪰(−Z)`.
pub fn split_skew_psd(z: &Mat) -> Result<JrPair> {
    Ok(JrPair {
        j: linalg::skew(z)?,
        r: linalg::psd_project(&-z)?,
    })
}

fn check_same_shape(z: &Mat, t: &Mat, context: &'static str) -> Result<()> {
    if z.shape() != t.shape() {
        return Err(Error::dims(
            context,
            format!("Z is {:?} but T is {:?}", z.shape(), t.shape()),
        ));
    }
    Ok(())
}

/// Factorisation of a data matrix `T` reused across many skew-symmetric
/// Procrustes solves `min ‖Z₁ − J T‖_F` over skew `J`.
#[derive(Debug, Clone)]
pub struct SkewProcrustes {
    v1: Mat,
    w1: Mat,
    sigma: Vector,
    /// `1/(σᵢ² + σⱼ²)`
    weights: Mat,
}

impl SkewProcrustes {
    pub fn new(t: &Mat, truncation_tol: f64) -> Result<Self> {
        let svd = linalg::skinny_svd(t, truncation_tol)?;
        let r = svd.rank();
        let s2: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
        let weights = Mat::from_fn(r, r, |i, j| 1.0 / (s2[i] + s2[j]));
        Ok(Self {
            v1: svd.u,
            w1: svd.v,
            sigma: svd.s,
            weights,
        })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn dim(&self) -> usize {
        self.v1.nrows()
    }

    pub fn v1(&self) -> &Mat {
        &self.v1
    }

    pub fn w1(&self) -> &Mat {
        &self.w1
    }

    pub fn sigma(&self) -> &Vector {
        &self.sigma
    }

    /// Minimum-norm skew solution for the right-hand side `z1`.
    pub fn solve(&self, z1: &Mat) -> Result<Mat> {
        if z1.nrows() != self.dim() || z1.ncols() != self.w1.nrows() {
            return Err(Error::dims(
                "skew Procrustes",
                format!(
                    "Z1 is {:?}, T is {}x{}",
                    z1.shape(),
                    self.dim(),
                    self.w1.nrows()
                ),
            ));
        }
        Ok(self.solve_projected(&(z1 * &self.w1)))
    }

    /// Same as [`SkewProcrustes::solve`] given `Z₁ W₁` instead of `Z₁`.
    pub fn solve_projected(&self, z1w: &Mat) -> Mat {
        let n = self.dim();
        let r = self.rank();
        if r == 0 {
            return Mat::zeros(n, n);
        }
        // range block: Φ ⊙ 2·Skew(Z₁₁ Σ₁)
        let z11 = self.v1.transpose() * z1w;
        let mut z11_sigma = z11;
        for (k, &s) in self.sigma.iter().enumerate() {
            z11_sigma.column_mut(k).scale_mut(s);
        }
        let twice_skew = &z11_sigma - z11_sigma.transpose();
        let j11 = twice_skew.component_mul(&self.weights);
        let mut j = &self.v1 * j11 * self.v1.transpose();
        if r < n {
            // coupling block V₂ Z₂₁ Σ₁⁻¹ V₁ᵀ, written with the projector I − V₁V₁ᵀ
            let coupling = self.range_complement(z1w) * self.sigma_inv_diag();
            let c = &coupling * self.v1.transpose();
            j += &c - c.transpose();
        }
        (&j - j.transpose()) * 0.5
    }

    fn sigma_inv_diag(&self) -> Mat {
        Mat::from_diagonal(&self.sigma.map(|s| 1.0 / s))
    }

    /// `(I − V₁V₁ᵀ) A`
    fn range_complement(&self, a: &Mat) -> Mat {
        a - &self.v1 * (self.v1.transpose() * a)
    }
}

/// Minimum-norm solution of `min ‖Z₁ − J T‖_F` over skew-symmetric `J`.
pub fn solve_skew_procrustes(z1: &Mat, t: &Mat) -> Result<Mat> {
    check_same_shape(z1, t, "solve_skew_procrustes")?;
    SkewProcrustes::new(t, DEFAULT_TRUNCATION_TOL)?.solve(z1)
}

/// Minimizers of the `TᵀT`-weighted problem and the two parts of its optimal
/// value.
#[derive(Debug, Clone)]
pub struct WeightedFit {
    pub pair: JrPair,
    /// `‖Z̃₂‖²`: data that no linear model can match.
    pub z2_norm_sq: f64,
    /// `‖Λ₊‖²`: positive eigenvalues of `Sym(Z̃₁)` that pH structure forbids.
    pub lambda_plus_norm_sq: f64,
    pub rank: usize,
}

impl WeightedFit {
    /// Optimal value of `‖Tᵀ(Z − (J−R)T)‖_F`.
    pub fn optimal_value(&self) -> f64 {
        (self.z2_norm_sq + self.lambda_plus_norm_sq).sqrt()
    }
}

/// Minimum-norm minimizers of `‖Tᵀ Z − Tᵀ (J − R) T‖_F`.
pub fn weighted_fit(z: &Mat, t: &Mat) -> Result<WeightedFit> {
    check_same_shape(z, t, "weighted_minimizers")?;
    let fac = SkewProcrustes::new(t, DEFAULT_TRUNCATION_TOL)?;
    Ok(weighted_fit_with(&fac, z))
}

pub(crate) fn weighted_fit_with(fac: &SkewProcrustes, z: &Mat) -> WeightedFit {
    let n = fac.dim();
    let r = fac.rank();
    if r == 0 {
        return WeightedFit {
            pair: JrPair::zeros(n),
            z2_norm_sq: 0.0,
            lambda_plus_norm_sq: 0.0,
            rank: 0,
        };
    }
    let sigma = Mat::from_diagonal(&fac.sigma);
    let sigma_inv = fac.sigma_inv_diag();
    let zw = z * &fac.w1;
    let z_tilde1 = &sigma * (fac.v1.transpose() * &zw);
    // Z̃₂ = Σ₁V₁ᵀ Z W₂ via the complement of the row space of T
    let z_perp = z - &zw * fac.w1.transpose();
    let z2_norm_sq = (&sigma * (fac.v1.transpose() * z_perp)).norm_squared();

    let skew_part = linalg::skew(&z_tilde1).expect("square");
    let psd_part = linalg::psd_project(&-&z_tilde1).expect("square");
    let (eigs, _) = linalg::sym_eigen(&z_tilde1).expect("square");
    let lambda_plus_norm_sq = eigs.iter().filter(|l| **l > 0.0).map(|l| l * l).sum();

    let lift = |core: Mat| &fac.v1 * &sigma_inv * core * &sigma_inv * fac.v1.transpose();
    let j = lift(skew_part);
    let r_mat = lift(psd_part);
    WeightedFit {
        pair: JrPair {
            j: (&j - j.transpose()) * 0.5,
            r: (&r_mat + r_mat.transpose()) * 0.5,
        },
        z2_norm_sq,
        lambda_plus_norm_sq,
        rank: r,
    }
}

/// `J⋆ = V₁Σ₁⁻¹ Skew(Z̃₁) Σ₁⁻¹V₁ᵀ`, `R⋆ = V₁Σ₁⁻¹ P⪰(−Z̃₁) Σ₁⁻¹V₁ᵀ` with
/// `Z̃₁ = Σ₁V₁ᵀ Z W₁`.
pub fn weighted_minimizers(z: &Mat, t: &Mat) -> Result<JrPair> {
    Ok(weighted_fit(z, t)?.pair)
}

/// Weighted minimizers plus, for rank-deficient `T`, the skew coupling
/// `J₂₁ = Z₂₁ Σ₁⁻¹` (with `R₂₁ = 0`) that matches the `V₂ᵀ Z W₁` block
/// exactly.
pub fn init_rank_deficient(z: &Mat, t: &Mat) -> Result<JrPair> {
    check_same_shape(z, t, "init_rank_deficient")?;
    let fac = SkewProcrustes::new(t, DEFAULT_TRUNCATION_TOL)?;
    Ok(init_rank_deficient_with(&fac, z))
}

pub(crate) fn init_rank_deficient_with(fac: &SkewProcrustes, z: &Mat) -> JrPair {
    let mut pair = weighted_fit_with(fac, z).pair;
    let (n, r) = (fac.dim(), fac.rank());
    if r > 0 && r < n {
        let zw = z * &fac.w1;
        let coupling = fac.range_complement(&zw) * fac.sigma_inv_diag();
        let c = &coupling * fac.v1.transpose();
        pair.j += &c - c.transpose();
        pair.j = (&pair.j - pair.j.transpose()) * 0.5;
    }
    pair
}

/// True when `R` passes the PSD check used across the crate.
pub(crate) fn is_psd(r: &Mat) -> Result<bool> {
    linalg::ensure_square(r)?;
    if r.nrows() == 0 {
        return Ok(true);
    }
    if !linalg::is_symmetric(r, PSD_TOL) {
        return Ok(false);
    }
    Ok(linalg::min_sym_eigenvalue(r)? >= -PSD_TOL * r.amax().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
        Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_skew(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        linalg::skew(&random(rng, n, n)).unwrap()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let g = random(rng, n, n);
        &g * g.transpose()
    }

    /// Residual of the skew Procrustes problem from a dense least-squares
    /// solve over the n(n−1)/2 free entries of J.
    fn vectorized_ls_residual(z1: &Mat, t: &Mat) -> f64 {
        let n = z1.nrows();
        let m = z1.ncols();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|k| ((k + 1)..n).map(move |l| (k, l)))
            .collect();
        if pairs.is_empty() {
            return z1.norm();
        }
        let mut a = Mat::zeros(n * m, pairs.len());
        for (col, &(k, l)) in pairs.iter().enumerate() {
            let mut basis = Mat::zeros(n, n);
            basis[(k, l)] = 1.0;
            basis[(l, k)] = -1.0;
            let img = basis * t;
            a.set_column(col, &Vector::from_column_slice(img.as_slice()));
        }
        let b = Vector::from_column_slice(z1.as_slice());
        // normal equations on the numerically nonsingular eigenspace of AᵀA
        let gram = a.transpose() * &a;
        let rhs = a.transpose() * &b;
        let eig = nalgebra::SymmetricEigen::new(gram);
        let cutoff = 1e-12 * eig.eigenvalues.amax();
        let mut theta = Vector::zeros(pairs.len());
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > cutoff {
                let q = eig.eigenvectors.column(k);
                theta += q * (q.dot(&rhs) / lambda);
            }
        }
        (b - a * theta).norm()
    }

    fn t_with_rank(rng: &mut ChaCha8Rng, n: usize, m: usize, rank: usize) -> Mat {
        random(rng, n, rank) * random(rng, rank, m)
    }

    #[test]
    fn split_examples() {
        let k = dmatrix![0.0, 2.0; -2.0, 0.0];
        let p = split_skew_psd(&k).unwrap();
        assert_eq!(p.j, k);
        assert!(p.r.amax() < 1e-15);

        let p = split_skew_psd(&-Mat::identity(3, 3)).unwrap();
        assert!(p.j.amax() == 0.0);
        assert!((p.r - Mat::identity(3, 3)).amax() < 1e-14);

        let p = split_skew_psd(&dmatrix![-1.0, 2.0; 4.0, -1.0]).unwrap();
        assert_eq!(p.j, dmatrix![0.0, -1.0; 1.0, 0.0]);
        assert!((p.r - dmatrix![2.0, -2.0; -2.0, 2.0]).amax() < 1e-14);
    }

    #[test]
    fn skew_procrustes_identity_t_is_skew_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(&mut rng, 4, 4);
        let j = solve_skew_procrustes(&z, &Mat::identity(4, 4)).unwrap();
        assert!((j - linalg::skew(&z).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn skew_procrustes_recovers_exact_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..6 {
            let j_true = random_skew(&mut rng, n);
            let t = random(&mut rng, n, 3 * n);
            let j = solve_skew_procrustes(&(&j_true * &t), &t).unwrap();
            assert!((j - j_true).amax() < 1e-10);
        }
    }

    #[test]
    fn skew_procrustes_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let n = 1 + trial % 6;
            let m = 1 + (trial * 7) % 12;
            let rank = 1 + trial % n.min(m);
            let t = t_with_rank(&mut rng, n, m, rank);
            let z1 = random(&mut rng, n, m);
            let j = solve_skew_procrustes(&z1, &t).unwrap();
            assert!((&j + j.transpose()).amax() <= 1e-12);
            let res = (&z1 - &j * &t).norm();
            let oracle = vectorized_ls_residual(&z1, &t);
            assert!(
                (res - oracle).abs() <= 1e-8 * oracle.max(1e-300).max(z1.norm() * 1e-8),
                "trial {trial}: {res} vs {oracle}"
            );
        }
    }

    #[test]
    fn skew_procrustes_zero_rank() {
        let j = solve_skew_procrustes(&Mat::identity(3, 3), &Mat::zeros(3, 3)).unwrap();
        assert_eq!(j, Mat::zeros(3, 3));
        assert!(solve_skew_procrustes(&Mat::zeros(2, 3), &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn weighted_toy_example() {
        let z = dmatrix![-1.0, 2.0; 2.0, -0.5];
        let t = dmatrix![1.0, 0.0; 0.0, 2.0];
        let fit = weighted_fit(&z, &t).unwrap();
        assert!((&fit.pair.j - dmatrix![0.0, -0.5; 0.5, 0.0]).amax() < 1e-12);
        assert!((&fit.pair.r - dmatrix![2.0, -1.0; -1.0, 0.5]).amax() < 1e-12);
        let weighted = (t.transpose() * (&z - fit.pair.combined() * &t)).norm();
        assert!((weighted - 2.0).abs() < 1e-12);
        assert!((fit.optimal_value() - 2.0).abs() < 1e-12);
        assert!(fit.z2_norm_sq.abs() < 1e-24);
    }

    #[test]
    fn weighted_identity_t_is_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random(&mut rng, 4, 4);
        let w = weighted_minimizers(&z, &Mat::identity(4, 4)).unwrap();
        let s = split_skew_psd(&z).unwrap();
        assert!((w.j - s.j).amax() < 1e-13);
        assert!((w.r - s.r).amax() < 1e-13);
    }

    #[test]
    fn weighted_exact_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..6 {
            let j = random_skew(&mut rng, n);
            let r = random_psd(&mut rng, n);
            let t = random(&mut rng, n, n);
            let z = (&j - &r) * &t;
            let pair = weighted_minimizers(&z, &t).unwrap();
            let val = (t.transpose() * (&z - pair.combined() * &t)).norm();
            assert!(val <= 1e-10, "{val}");
        }
    }

    #[test]
    fn weighted_optimal_value_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..50 {
            let n = 1 + trial % 6;
            let m = 1 + trial % 12;
            let rank = 1 + trial % n.min(m);
            let t = t_with_rank(&mut rng, n, m, rank);
            let z = random(&mut rng, n, m);
            let fit = weighted_fit(&z, &t).unwrap();
            assert!(fit.pair.is_valid(1e-10));
            let val_sq = (t.transpose() * (&z - fit.pair.combined() * &t)).norm_squared();
            let predicted = fit.z2_norm_sq + fit.lambda_plus_norm_sq;
            assert!((val_sq - predicted).abs() <= 1e-10 * predicted.max(1.0));
        }
    }

    #[test]
    fn weighted_minimizers_have_minimum_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, m) = (5, 8);
        let t = t_with_rank(&mut rng, n, m, 3);
        let z = random(&mut rng, n, m);
        let fac = SkewProcrustes::new(&t, DEFAULT_TRUNCATION_TOL).unwrap();
        let pair = weighted_fit_with(&fac, &z).pair;
        let weighted = |p: &JrPair| (t.transpose() * (&z - p.combined() * &t)).norm();
        let base = weighted(&pair);
        // orthonormal complement of range(T)
        let proj = Mat::identity(n, n) - fac.v1() * fac.v1().transpose();
        let (vals, vecs) = linalg::sym_eigen(&proj).unwrap();
        let v2 = vecs.columns(0, n - 3).into_owned();
        assert!(vals[n - 4] > 0.5);
        for _ in 0..20 {
            let k = random_skew(&mut rng, n - 3);
            let p = random_psd(&mut rng, n - 3);
            let other = JrPair {
                j: &pair.j + &v2 * k * v2.transpose(),
                r: &pair.r + &v2 * p * v2.transpose(),
            };
            assert!((weighted(&other) - base).abs() <= 1e-10 * base.max(1.0));
            assert!(other.j.norm() > pair.j.norm());
            assert!(other.r.norm() > pair.r.norm());
        }
    }

    #[test]
    fn rank_deficient_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // full row rank: no change
        let t = random(&mut rng, 4, 9);
        let z = random(&mut rng, 4, 9);
        let a = weighted_minimizers(&z, &t).unwrap();
        let b = init_rank_deficient(&z, &t).unwrap();
        assert!((a.j - b.j).amax() < 1e-14 && (a.r - b.r).amax() < 1e-14);

        for _ in 0..20 {
            let t = t_with_rank(&mut rng, 5, 9, 3);
            let z = random(&mut rng, 5, 9);
            let w = weighted_minimizers(&z, &t).unwrap();
            let init = init_rank_deficient(&z, &t).unwrap();
            assert!(init.is_valid(1e-10));
            let f = |p: &JrPair| (&z - p.combined() * &t).norm();
            assert!(f(&init) < f(&w));
            // weighted objective is untouched by the coupling block
            let fw = |p: &JrPair| (t.transpose() * (&z - p.combined() * &t)).norm();
            assert!((fw(&init) - fw(&w)).abs() <= 1e-10 * fw(&w).max(1.0));
        }
    }

    #[test]
    fn rank_deficient_exact_data_leaves_unreachable_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, m, rank) = (5, 9, 3);
        let t = t_with_rank(&mut rng, n, m, rank);
        let fac = SkewProcrustes::new(&t, DEFAULT_TRUNCATION_TOL).unwrap();
        let v1 = fac.v1().clone();
        let j_true = &v1 * random_skew(&mut rng, rank) * v1.transpose();
        let r_true = &v1 * random_psd(&mut rng, rank) * v1.transpose();
        let noise = random(&mut rng, n, m) * 0.1;
        let z = (&j_true - &r_true) * &t + &noise;
        let init = init_rank_deficient_with(&fac, &z);
        let residual = (&z - init.combined() * &t).norm_squared();
        // Z₁₂ and Z₂₂ are the parts of Z outside the row space of T
        let z_perp = &z - &z * fac.w1() * fac.w1().transpose();
        let unreachable = z_perp.norm_squared();
        let lambda = weighted_fit_with(&fac, &z).lambda_plus_norm_sq;
        assert!(residual >= unreachable - 1e-12);
        // remaining excess comes from the Z₁₁ block only
        let z11_res = (fac.v1().transpose() * (&z - init.combined() * &t) * fac.w1()).norm_squared();
        assert!((residual - unreachable - z11_res).abs() <= 1e-10);
        let _ = lambda;
    }

    #[test]
    fn residual_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..50 {
            let n = 1 + trial % 6;
            let m = n + trial % 7;
            let t = random(&mut rng, n, m);
            let z = random(&mut rng, n, m);
            let pair = weighted_minimizers(&z, &t).unwrap();
            let c = linalg::pinv(&t, 0.0).unwrap().norm();
            let lhs = (&z - pair.combined() * &t).norm();
            let rhs = (t.transpose() * (&z - pair.combined() * &t)).norm();
            assert!(lhs <= c * rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
