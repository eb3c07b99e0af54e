//! Unstructured least-squares baselines and intrusive Galerkin reduction.

use crate::data::MidpointSnapshots;
use crate::error::{Error, Result};
use crate::linalg::{self, vstack, Mat};
use crate::model::{LtiSystem, PhSystem};

/// `min ‖Z₁ − 𝒜 Z₀‖_F` with minimum-norm solution `𝒜 = Z₁ Z₀†`, split into
/// `[[A, B], [C, D]]` with `A` of size `n_states`.
pub fn dmd_fit(z0: &Mat, z1: &Mat, n_states: usize, truncation_tol: f64) -> Result<LtiSystem> {
    if z0.ncols() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if z0.ncols() != z1.ncols() {
        return Err(Error::dims(
            "dmd_fit",
            format!("Z0 has {} columns but Z1 has {}", z0.ncols(), z1.ncols()),
        ));
    }
    if n_states > z0.nrows() || n_states > z1.nrows() {
        return Err(Error::dims(
            "dmd_fit",
            format!(
                "{n_states} states do not fit stacks with {} and {} rows",
                z0.nrows(),
                z1.nrows()
            ),
        ));
    }
    let full = z1 * linalg::pinv(z0, truncation_tol)?;
    let (rows, cols) = full.shape();
    let (m, p) = (cols - n_states, rows - n_states);
    LtiSystem::new(
        full.view((0, 0), (n_states, n_states)).into_owned(),
        full.view((0, n_states), (n_states, m)).into_owned(),
        full.view((n_states, 0), (p, n_states)).into_owned(),
        full.view((n_states, n_states), (p, m)).into_owned(),
    )
}

/// Operator inference on the midpoint stacks: `[Ẋ̂; Ŷ] ≈ 𝒜 [X̂; Û]`,
/// optionally in the coordinates of an orthonormal basis `Φ`.
pub fn oi_fit(snaps: &MidpointSnapshots, phi: Option<&Mat>, truncation_tol: f64) -> Result<LtiSystem> {
    let (xdot, x) = match phi {
        Some(phi) => {
            if phi.nrows() != snaps.x.nrows() {
                return Err(Error::dims(
                    "oi_fit",
                    format!("basis has {} rows, states have {}", phi.nrows(), snaps.x.nrows()),
                ));
            }
            (phi.transpose() * &snaps.xdot, phi.transpose() * &snaps.x)
        }
        None => (snaps.xdot.clone(), snaps.x.clone()),
    };
    let n = x.nrows();
    dmd_fit(&vstack(&x, &snaps.u), &vstack(&xdot, &snaps.y), n, truncation_tol)
}

/// Structure-preserving Galerkin projection `x ≈ Φ x_r` of a pH system.
pub fn pod_galerkin(sys: &PhSystem, phi: &Mat) -> Result<PhSystem> {
    if phi.nrows() != sys.n_states() {
        return Err(Error::dims(
            "pod_galerkin",
            format!("basis has {} rows, system has {} states", phi.nrows(), sys.n_states()),
        ));
    }
    let pt = phi.transpose();
    let project = |m: &Mat| &pt * m * phi;
    PhSystem::new(
        project(&sys.h),
        project(&sys.j),
        project(&sys.r),
        &pt * &sys.g,
        &pt * &sys.p,
        sys.s.clone(),
        sys.n.clone(),
    )
}
