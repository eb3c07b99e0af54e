//! Assembly of the least-squares data matrices from trajectories.

use crate::error::{Error, Result};
use crate::linalg::{self, vstack, Mat, DEFAULT_TRUNCATION_TOL};
use crate::model::PhSystem;
use crate::procrustes::JrPair;
use crate::simulate::Trajectory;

/// Consecutive-pair snapshot matrices of a trajectory with `M + 1` samples,
/// each with `M` columns: forward differences `Ẋ̂` and midpoint averages
/// `X̂`, `Û`, `Ŷ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointSnapshots {
    pub xdot: Mat,
    pub x: Mat,
    pub u: Mat,
    pub y: Mat,
    pub dt: f64,
}

pub fn midpoint_matrices(traj: &Trajectory) -> Result<MidpointSnapshots> {
    let k = traj.n_samples();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    let m = k - 1;
    let diff = |a: &Mat| (a.columns(1, m) - a.columns(0, m)) / traj.dt;
    let avg = |a: &Mat| (a.columns(1, m) + a.columns(0, m)) * 0.5;
    Ok(MidpointSnapshots {
        xdot: diff(&traj.x),
        x: avg(&traj.x),
        u: avg(&traj.u),
        y: avg(&traj.y),
        dt: traj.dt,
    })
}

/// Leading `r` left singular vectors of the raw snapshot matrix (no
/// centering).
pub fn pod_basis(x: &Mat, r: usize) -> Result<Mat> {
    let svd = linalg::skinny_svd(x, DEFAULT_TRUNCATION_TOL)?;
    if r == 0 || r > svd.rank() {
        return Err(Error::RankExceeded {
            requested: r,
            rank: svd.rank(),
        });
    }
    Ok(svd.u.columns(0, r).into_owned())
}

/// The stacked pair `Z = [ΦᵀHΦ Φᵀ Ẋ̂; −Ŷ]`, `T = [Φᵀ X̂; Û]` together with
/// the reduced energy matrix `ΦᵀHΦ`.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    pub z: Mat,
    pub t: Mat,
    pub phi: Option<Mat>,
    pub h_reduced: Mat,
    pub dt: f64,
}

impl DataMatrices {
    /// Reduced state dimension `r̃`.
    pub fn n_states(&self) -> usize {
        self.h_reduced.nrows()
    }

    pub fn n_ports(&self) -> usize {
        self.z.nrows() - self.n_states()
    }

    pub fn n_snapshots(&self) -> usize {
        self.z.ncols()
    }

    /// Continuous-time pH model whose structure matrices are `pair`.
    pub fn to_ph_system(&self, pair: &JrPair) -> Result<PhSystem> {
        PhSystem::from_structure(self.h_reduced.clone(), &pair.j, &pair.r)
    }
}

pub fn build_zt(h: &Mat, snaps: &MidpointSnapshots, phi: Option<&Mat>) -> Result<DataMatrices> {
    let n = snaps.x.nrows();
    let cols = snaps.x.ncols();
    if h.shape() != (n, n) {
        return Err(Error::dims(
            "build_zt",
            format!("H is {:?} but the state dimension is {n}", h.shape()),
        ));
    }
    let same_cols = [&snaps.xdot, &snaps.u, &snaps.y]
        .iter()
        .all(|m| m.ncols() == cols);
    if snaps.xdot.nrows() != n || !same_cols || snaps.u.nrows() != snaps.y.nrows() {
        return Err(Error::dims(
            "build_zt",
            format!(
                "Xdot {:?}, X {:?}, U {:?}, Y {:?}",
                snaps.xdot.shape(),
                snaps.x.shape(),
                snaps.u.shape(),
                snaps.y.shape()
            ),
        ));
    }
    if !linalg::is_symmetric(h, 1e-10) {
        return Err(Error::InvalidArgument("H is not symmetric".into()));
    }
    let min_eig = linalg::min_sym_eigenvalue(h)?;
    if !(min_eig > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "H is not SPD (min eigenvalue {min_eig:.3e})"
        )));
    }
    let (top_z, top_t, h_reduced) = match phi {
        None => (h * &snaps.xdot, snaps.x.clone(), h.clone()),
        Some(phi) => {
            if phi.nrows() != n || phi.ncols() == 0 || phi.ncols() > n {
                return Err(Error::dims(
                    "build_zt",
                    format!("basis is {:?} for state dimension {n}", phi.shape()),
                ));
            }
            let gram = phi.transpose() * phi;
            if (gram - Mat::identity(phi.ncols(), phi.ncols())).amax() > 1e-10 {
                return Err(Error::InvalidArgument(
                    "reduced basis does not have orthonormal columns".into(),
                ));
            }
            let h_red = phi.transpose() * h * phi;
            let h_red = (&h_red + h_red.transpose()) * 0.5;
            let xdot_red = phi.transpose() * &snaps.xdot;
            (&h_red * xdot_red, phi.transpose() * &snaps.x, h_red)
        }
    };
    Ok(DataMatrices {
        z: vstack(&top_z, &-&snaps.y),
        t: vstack(&top_t, &snaps.u),
        phi: phi.cloned(),
        h_reduced,
        dt: snaps.dt,
    })
}

/// Shifted snapshot stacks for unstructured fits:
/// `Z₀ = [x₀ … x_{M−1}; u₀ … u_{M−1}]` and `Z₁ = [Δx₀ … Δx_{M−1}; y₀ … y_{M−1}]`
/// where `Δxᵢ` is `x_{i+1}` (discrete) or `(x_{i+1} − xᵢ)/δt` (continuous).
pub fn dmd_snapshot_matrices(traj: &Trajectory, continuous: bool) -> Result<(Mat, Mat)> {
    let k = traj.n_samples();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    let m = k - 1;
    let z0 = vstack(
        &traj.x.columns(0, m).into_owned(),
        &traj.u.columns(0, m).into_owned(),
    );
    let shifted = if continuous {
        (traj.x.columns(1, m) - traj.x.columns(0, m)) / traj.dt
    } else {
        traj.x.columns(1, m).into_owned()
    };
    let z1 = vstack(&shifted, &traj.y.columns(0, m).into_owned());
    Ok((z0, z1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::msd_builder;
    use crate::simulate::{simulate_midpoint, InputSignal};
    use nalgebra::dmatrix;

    fn scalar_traj(xs: &[f64], dt: f64) -> Trajectory {
        let k = xs.len();
        Trajectory {
            dt,
            t: (0..k).map(|i| i as f64 * dt).collect(),
            u: Mat::zeros(0, k),
            x: Mat::from_row_slice(1, k, xs),
            y: Mat::zeros(0, k),
        }
    }

    fn msd_training() -> (PhSystem, Trajectory) {
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let traj = simulate_midpoint(
            &sys,
            &[InputSignal::TrainingExpSin],
            &Vector::zeros(6),
            1.0 / 25.0,
            100,
        )
        .unwrap();
        (sys, traj)
    }

    #[test]
    fn midpoint_matrices_examples() {
        let s = midpoint_matrices(&scalar_traj(&[0.0, 2.0], 1.0)).unwrap();
        assert_eq!(s.xdot, dmatrix![2.0]);
        assert_eq!(s.x, dmatrix![1.0]);

        let s = midpoint_matrices(&scalar_traj(&[3.0, 3.0, 3.0], 0.5)).unwrap();
        assert_eq!(s.xdot, Mat::zeros(1, 2));
        assert_eq!(s.x, dmatrix![3.0, 3.0]);

        assert!(matches!(
            midpoint_matrices(&scalar_traj(&[1.0], 1.0)),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn msd_snapshots_satisfy_discrete_ph_equation() {
        let (sys, traj) = msd_training();
        let s = midpoint_matrices(&traj).unwrap();
        let res = &sys.h * &s.xdot - sys.a_hat() * &s.x - sys.b_hat() * &s.u;
        for col in res.column_iter() {
            assert!(col.norm() <= 1e-10);
        }
    }

    #[test]
    fn build_zt_scalar_example() {
        let snaps = MidpointSnapshots {
            xdot: dmatrix![3.0],
            x: dmatrix![1.0],
            u: dmatrix![5.0],
            y: dmatrix![7.0],
            dt: 1.0,
        };
        let d = build_zt(&dmatrix![2.0], &snaps, None).unwrap();
        assert_eq!(d.z, dmatrix![6.0; -7.0]);
        assert_eq!(d.t, dmatrix![1.0; 5.0]);

        let eye = Mat::identity(1, 1);
        let d2 = build_zt(&dmatrix![2.0], &snaps, Some(&eye)).unwrap();
        assert_eq!(d2.z, d.z);
        assert_eq!(d2.t, d.t);

        assert!(build_zt(&dmatrix![-2.0], &snaps, None).is_err());
        assert!(build_zt(&Mat::identity(2, 2), &snaps, None).is_err());
    }

    #[test]
    fn exact_data_fits_true_structure() {
        let (sys, traj) = msd_training();
        let d = build_zt(&sys.h, &midpoint_matrices(&traj).unwrap(), None).unwrap();
        let (jcal, rcal) = sys.structure();
        let res = (&d.z - (jcal - rcal) * &d.t).norm() / d.z.norm();
        assert!(res <= 1e-10, "relative residual {res}");
        let eye = Mat::identity(6, 6);
        let d_eye = build_zt(&sys.h, &midpoint_matrices(&traj).unwrap(), Some(&eye)).unwrap();
        assert!((d_eye.z - &d.z).amax() < 1e-14);
    }

    #[test]
    fn pod_examples() {
        let x = dmatrix![3.0, 0.0, 0.0; 0.0, 2.0, 0.0; 0.0, 0.0, 1.0];
        let phi = pod_basis(&x, 1).unwrap();
        assert!((phi[(0, 0)].abs() - 1.0).abs() < 1e-14);

        let (_, traj) = msd_training();
        let rank = linalg::skinny_svd(&traj.x, DEFAULT_TRUNCATION_TOL).unwrap().rank();
        let phi = pod_basis(&traj.x, rank).unwrap();
        let proj = &phi * (phi.transpose() * &traj.x);
        assert!((&traj.x - proj).norm() <= 1e-10);
        assert!((phi.transpose() * &phi - Mat::identity(rank, rank)).amax() <= 1e-10);
        assert!(matches!(
            pod_basis(&traj.x, rank + 1),
            Err(Error::RankExceeded { .. })
        ));
        assert!(pod_basis(&traj.x, 0).is_err());
    }

    #[test]
    fn pod_error_decreases_with_r() {
        let sys = msd_builder(50, 4.0, 4.0, 1.0, 2).unwrap();
        let traj = simulate_midpoint(
            &sys,
            &[InputSignal::TrainingExpSin, InputSignal::TrainingExpCos],
            &Vector::zeros(100),
            0.01,
            400,
        )
        .unwrap();
        let svd = linalg::skinny_svd(&traj.x, DEFAULT_TRUNCATION_TOL).unwrap();
        let total = traj.x.norm_squared();
        let mut last = f64::INFINITY;
        for r in 1..=svd.rank().min(20) {
            let phi = pod_basis(&traj.x, r).unwrap();
            let err = (&traj.x - &phi * (phi.transpose() * &traj.x)).norm_squared();
            let tail: f64 = svd.s.iter().skip(r).map(|s| s * s).sum();
            assert!((err - tail).abs() <= 1e-8 * total);
            assert!(err <= last + 1e-12 * total);
            last = err;
        }
    }

    #[test]
    fn dmd_stacks() {
        let traj = scalar_traj(&[1.0, 2.0, 4.0], 1.0);
        let (z0, z1) = dmd_snapshot_matrices(&traj, false).unwrap();
        assert_eq!(z0, dmatrix![1.0, 2.0]);
        assert_eq!(z1, dmatrix![2.0, 4.0]);
        let (_, z1) = dmd_snapshot_matrices(&traj, true).unwrap();
        assert_eq!(z1, dmatrix![1.0, 2.0]);

        let lin = scalar_traj(&[0.0, 0.5, 1.0, 1.5], 0.25);
        let (_, z1) = dmd_snapshot_matrices(&lin, true).unwrap();
        assert!(z1.iter().all(|v| (v - 2.0).abs() < 1e-14));
    }
}
