//! Networked multi-BS tracking of moving targets, desk scale.
//!
//! The crate simulates a set of MIMO-OFDM base stations that jointly track
//! moving point targets from their own echo returns:
//!
//! - [`scenario`]: static geometry, radio constants, the nonlinear
//!   observation map and its Jacobian;
//! - [`motion`]: the constant-velocity + RCS-random-walk transition model;
//! - [`fim`]: Fisher information of the echo signals given transmit
//!   covariances, and the per-block measurement covariance assembled from it;
//! - [`nkf`]: the networked (multi-BS) extended Kalman filter;
//! - [`pcrb`]: the recursive posterior Cramer-Rao bound;
//! - [`beamform`]: per-block transmit-covariance optimization that minimizes
//!   the weighted bound, via a purpose-built log-barrier SDP solver;
//! - [`harness`]: end-to-end runs, Monte-Carlo campaigns, CSV/CLI plumbing.

pub mod beamform;
pub mod error;
pub mod fim;
pub mod harness;
pub mod linalg;
pub mod motion;
pub mod nkf;
pub mod pcrb;
pub mod scenario;

pub use error::{Error, Result};
