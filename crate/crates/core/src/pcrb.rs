//! Recursive posterior Cramer-Rao bound.
//!
//! The Bayesian information matrix at block n is the sum of two parts:
//! prior information carried over from block n-1 through the motion model,
//! and data information contributed by the block's measurement. The bound
//! itself is the inverse of the accumulated matrix; the per-target position
//! and velocity accuracies are root sums of its diagonal entries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fim::{InfoMatrix, MatrixSpace};
use crate::linalg;
use crate::motion::MotionModel;
use crate::scenario::StateLayout;

/// Bayesian information matrix at one block.
#[derive(Debug, Clone)]
pub struct Bim {
    pub info: InfoMatrix,
    pub block: usize,
}

impl Bim {
    /// Initial matrix: data information only (no motion prior exists yet).
    pub fn initial(jacobian: &DMatrix<f64>, meas_info: &InfoMatrix) -> Result<Bim> {
        let data = data_info(jacobian, meas_info)?;
        Ok(Bim {
            info: data,
            block: 0,
        })
    }
}

/// Prior information propagated from the previous block:
/// `J_P = (R_k + F J_B^{-1} F^T)^{-1}`.
///
/// Evaluated through the algebraically equivalent factored form
/// `K - K U (I + U^T K U)^{-1} U^T K` with `K = F^{-T} J_B F^{-1}` and
/// `U U^T = R_k`, which never inverts `J_B` or `R_k` themselves: the inner
/// matrix is at least the identity. Singular previous information therefore
/// propagates as zero prior information along its null directions (and is
/// flagged) instead of failing; `R_k = 0` degenerates exactly to `K`.
pub fn prior_info(prev: &Bim, model: &MotionModel) -> Result<InfoMatrix> {
    let dim = model.state_dim();
    if prev.info.dim() != dim {
        return Err(Error::Dimension {
            what: "prior_info",
            expected: dim,
            got: prev.info.dim(),
        });
    }
    let f_inv = model
        .transition
        .clone()
        .try_inverse()
        .expect("transition is unimodular");
    let carried = linalg::symmetrize(&(f_inv.transpose() * prev.info.matrix() * &f_inv));
    let noise_factor = linalg::psd_factor(&model.process_cov, "process covariance")?;
    let ku = &carried * &noise_factor;
    let inner = DMatrix::identity(noise_factor.ncols(), noise_factor.ncols())
        + noise_factor.transpose() * &ku;
    let solved = linalg::spd_solve(&inner, &ku.transpose(), "prior information")?;
    let prior = &carried - &ku * solved;

    // A rank-deficient previous matrix is a legitimate but degenerate input;
    // flag it like a pseudo-inverse would.
    let ev = linalg::sym_eigenvalues(prev.info.matrix());
    let singular = ev[0] <= 1e-12 * prev.info.matrix().trace().abs();
    Ok(InfoMatrix::with_truncation(
        prior,
        MatrixSpace::State,
        prev.info.truncated() || singular,
    ))
}

/// Data information of one block: `J_D = H^T R_u^{-1} H`, taking the
/// measurement information matrix (the inverse covariance) directly.
///
/// Both the Jacobian and the measurement information are evaluated at the
/// prediction estimate; singularity here is a legitimate geometric outcome,
/// not an error.
pub fn data_info(jacobian: &DMatrix<f64>, meas_info: &InfoMatrix) -> Result<InfoMatrix> {
    if jacobian.nrows() != meas_info.dim() {
        return Err(Error::Dimension {
            what: "data_info",
            expected: meas_info.dim(),
            got: jacobian.nrows(),
        });
    }
    let j = jacobian.transpose() * meas_info.matrix() * jacobian;
    Ok(InfoMatrix::with_truncation(
        j,
        MatrixSpace::State,
        meas_info.truncated(),
    ))
}

/// One recursion step: `J_B(n) = prior_info(n) + data_info(n)`.
pub fn bim_step(
    prev: &Bim,
    model: &MotionModel,
    jacobian: &DMatrix<f64>,
    meas_info: &InfoMatrix,
) -> Result<Bim> {
    let prior = prior_info(prev, model)?;
    let data = data_info(jacobian, meas_info)?;
    let total = prior.matrix() + data.matrix();
    Ok(Bim {
        info: InfoMatrix::with_truncation(
            total,
            MatrixSpace::State,
            prior.truncated() || data.truncated(),
        ),
        block: prev.block + 1,
    })
}

/// Per-target accuracy bounds: position and velocity root-sum diagonals of
/// the inverse BIM.
pub fn accuracy(bim: &Bim, target: usize, layout: StateLayout) -> Result<(f64, f64)> {
    let inv = match linalg::spd_inverse(bim.info.matrix(), "BIM inverse") {
        Ok(inv) => inv,
        Err(_) => linalg::sym_pseudo_inverse(bim.info.matrix(), 1e-10).inverse,
    };
    let pos = inv[(layout.pos_x(target), layout.pos_x(target))]
        + inv[(layout.pos_y(target), layout.pos_y(target))];
    let vel = inv[(layout.vel_x(target), layout.vel_x(target))]
        + inv[(layout.vel_y(target), layout.vel_y(target))];
    Ok((pos.max(0.0).sqrt(), vel.max(0.0).sqrt()))
}
