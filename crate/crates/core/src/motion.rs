//! Linear-Gaussian state transition: constant-velocity kinematics plus a
//! first-order Markov (random walk) model for the equivalent RCS entries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scenario::{GlobalState, Scenario, StateLayout};

/// The per-block transition model over the full stacked state.
#[derive(Debug, Clone)]
pub struct MotionModel {
    /// Block-diagonal transition: constant-velocity kinematics, identity on
    /// the equivalent-RCS tail.
    pub transition: DMatrix<f64>,
    /// Block-diagonal process covariance.
    pub process_cov: DMatrix<f64>,
    pub dt: f64,
    pub process_noise: f64,
    layout: StateLayout,
}

/// Builds the transition and process-noise matrices for Q targets observed
/// by K BSs over block interval `dt`, with process-noise power `mu` and
/// equivalent-RCS walk covariance `ercs_cov` (2KQ x 2KQ).
pub fn build_motion_model(
    num_targets: usize,
    num_bs: usize,
    dt: f64,
    mu: f64,
    ercs_cov: &DMatrix<f64>,
) -> Result<MotionModel> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    if mu < 0.0 {
        return Err(Error::config("mu", "must be nonnegative"));
    }
    let layout = StateLayout {
        num_targets,
        num_bs,
    };
    let ercs_dim = 2 * num_bs * num_targets;
    if ercs_cov.nrows() != ercs_dim || ercs_cov.ncols() != ercs_dim {
        return Err(Error::Dimension {
            what: "ercs_cov",
            expected: ercs_dim,
            got: ercs_cov.nrows(),
        });
    }
    if !linalg::is_psd(ercs_cov, 1e-12) {
        let ev = linalg::sym_eigenvalues(ercs_cov);
        return Err(Error::NotPsd {
            what: "ercs_cov",
            min_eig: ev[0],
        });
    }

    let half = 2 * num_targets;
    let mut kinematic = DMatrix::identity(4 * num_targets, 4 * num_targets);
    for i in 0..half {
        kinematic[(i, half + i)] = dt;
    }
    let mut kin_cov = DMatrix::zeros(4 * num_targets, 4 * num_targets);
    for i in 0..half {
        kin_cov[(i, i)] = mu * dt.powi(3) / 3.0;
        kin_cov[(i, half + i)] = mu * dt.powi(2) / 2.0;
        kin_cov[(half + i, i)] = mu * dt.powi(2) / 2.0;
        kin_cov[(half + i, half + i)] = mu * dt;
    }

    let transition = linalg::block_diag(&[kinematic, DMatrix::identity(ercs_dim, ercs_dim)]);
    let process_cov = linalg::block_diag(&[kin_cov, ercs_cov.clone()]);
    debug_assert!(linalg::is_psd(&process_cov, 1e-12));
    Ok(MotionModel {
        transition,
        process_cov,
        dt,
        process_noise: mu,
        layout,
    })
}

impl MotionModel {
    /// Model for a scenario: dt, mu from the file; isotropic RCS walk.
    pub fn for_scenario(scenario: &Scenario) -> Result<MotionModel> {
        let ercs_dim = 2 * scenario.num_bs() * scenario.num_targets();
        let ercs_cov = DMatrix::identity(ercs_dim, ercs_dim) * scenario.sim.ercs_process_noise;
        build_motion_model(
            scenario.num_targets(),
            scenario.num_bs(),
            scenario.radio.block_interval,
            scenario.sim.process_noise,
            &ercs_cov,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.layout.dim()
    }
}

/// One block of propagation. With an RNG, process noise drawn from the model
/// covariance is added; without, the propagation is deterministic.
pub fn propagate<R: Rng>(
    state: &GlobalState,
    model: &MotionModel,
    rng: Option<&mut R>,
) -> Result<GlobalState> {
    if state.dim() != model.state_dim() {
        return Err(Error::Dimension {
            what: "propagate state",
            expected: model.state_dim(),
            got: state.dim(),
        });
    }
    let mut next = &model.transition * state.as_vector();
    if let Some(rng) = rng {
        let factor = linalg::psd_factor(&model.process_cov, "process covariance")?;
        let z = DVector::from_fn(next.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        next += factor * z;
    }
    GlobalState::from_vector(next, model.layout.num_bs, model.layout.num_targets)
}
