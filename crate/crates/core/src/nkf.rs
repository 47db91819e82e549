//! The networked Kalman filter: an extended Kalman filter over the stacked
//! multi-BS, multi-target state, driven by the stacked observable vector.
//!
//! Measurements arrive pre-associated (association is assumed solved
//! upstream). The update uses the printed (I - G H) P covariance form,
//! symmetrized afterwards.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::motion::MotionModel;
use crate::scenario::{measurement_jacobian, measurement_map, GlobalState, Scenario};

/// Filter state: estimate, covariance, and the block index the estimate
/// refers to.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub estimate: GlobalState,
    pub covariance: DMatrix<f64>,
    pub block: usize,
}

/// Initial covariance per target entry: 1 m^2 on positions, 0.25 m^2/s^2 on
/// velocities, 1e-2 on each equivalent-RCS component.
pub const INIT_POS_VAR: f64 = 1.0;
pub const INIT_VEL_VAR: f64 = 0.25;
pub const INIT_ERCS_VAR: f64 = 1e-2;

impl TrackState {
    /// Acquisition-style initialization: the truth perturbed by a draw from
    /// the diagonal initial covariance.
    pub fn initialize<R: Rng>(truth: &GlobalState, rng: &mut R) -> TrackState {
        let layout = truth.layout();
        let dim = layout.dim();
        let mut cov = DMatrix::zeros(dim, dim);
        for q in 0..layout.num_targets {
            cov[(layout.pos_x(q), layout.pos_x(q))] = INIT_POS_VAR;
            cov[(layout.pos_y(q), layout.pos_y(q))] = INIT_POS_VAR;
            cov[(layout.vel_x(q), layout.vel_x(q))] = INIT_VEL_VAR;
            cov[(layout.vel_y(q), layout.vel_y(q))] = INIT_VEL_VAR;
            for k in 0..layout.num_bs {
                cov[(layout.ercs_re(k, q), layout.ercs_re(k, q))] = INIT_ERCS_VAR;
                cov[(layout.ercs_im(k, q), layout.ercs_im(k, q))] = INIT_ERCS_VAR;
            }
        }
        let mut v = truth.as_vector().clone();
        for i in 0..dim {
            v[i] += cov[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        TrackState {
            estimate: GlobalState::from_vector(v, layout.num_bs, layout.num_targets)
                .expect("layout preserved"),
            covariance: cov,
            block: 0,
        }
    }
}

/// Prediction step: propagate the estimate and inflate the covariance by the
/// process noise.
pub fn predict(posterior: &TrackState, model: &MotionModel) -> Result<TrackState> {
    let f = &model.transition;
    if posterior.covariance.nrows() != f.nrows() {
        return Err(Error::Dimension {
            what: "predict covariance",
            expected: f.nrows(),
            got: posterior.covariance.nrows(),
        });
    }
    let est = f * posterior.estimate.as_vector();
    let cov = f * &posterior.covariance * f.transpose() + &model.process_cov;
    let layout = posterior.estimate.layout();
    Ok(TrackState {
        estimate: GlobalState::from_vector(est, layout.num_bs, layout.num_targets)?,
        covariance: linalg::symmetrize(&cov),
        block: posterior.block + 1,
    })
}

/// Update step: linearize the measurement map at the prediction, apply the
/// Kalman gain, and symmetrize the (I - G H) P posterior covariance.
pub fn update(
    prediction: &TrackState,
    measured: &DVector<f64>,
    meas_cov: &DMatrix<f64>,
    scenario: &Scenario,
) -> Result<TrackState> {
    let h = measurement_jacobian(&prediction.estimate, scenario)?;
    if measured.len() != h.nrows() || meas_cov.nrows() != h.nrows() {
        return Err(Error::Dimension {
            what: "update measurement",
            expected: h.nrows(),
            got: measured.len(),
        });
    }
    let p = &prediction.covariance;
    let innovation_cov = &h * p * h.transpose() + meas_cov;
    // Gain via a symmetric solve: S G^T = H P  =>  G = P H^T S^{-1}.
    let gain_t = linalg::spd_solve(&innovation_cov, &(&h * p), "innovation covariance")?;
    let gain = gain_t.transpose();
    let predicted_meas = measurement_map(&prediction.estimate, scenario)?;
    let est = prediction.estimate.as_vector() + &gain * (measured - predicted_meas);
    let dim = p.nrows();
    let cov = (DMatrix::identity(dim, dim) - &gain * &h) * p;
    let layout = prediction.estimate.layout();
    Ok(TrackState {
        estimate: GlobalState::from_vector(est, layout.num_bs, layout.num_targets)?,
        covariance: linalg::symmetrize(&cov),
        block: prediction.block,
    })
}

/// One block of filtering: update with this block's measurement, then
/// predict the next block. Returns (posterior at n, prediction at n+1).
pub fn run_block(
    prediction: &TrackState,
    measured: &DVector<f64>,
    meas_cov: &DMatrix<f64>,
    scenario: &Scenario,
    model: &MotionModel,
) -> Result<(TrackState, TrackState)> {
    let posterior = update(prediction, measured, meas_cov, scenario)?;
    let next = predict(&posterior, model)?;
    Ok((posterior, next))
}
