//! Radio-tomographic shadowing maps and minimum-count aerial base station
//! placement.
//!
//! * [`tomography`]: shadowing as a normalized line integral of a spatial loss
//!   field, evaluated by voxel traversal; the ellipsoid weighted sum; a ridge
//!   estimator for the field.
//! * [`channel`]: gain, Shannon capacity and the user-by-position capacity matrix.
//! * [`placement`]: reweighted group-sparse ADMM with greedy rounding.
//! * [`reference`]: exhaustive search and exact LPs used as oracles.
//! * [`scenario`]: synthetic cities and the Monte Carlo harness.

pub mod channel;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod matrix;
pub mod placement;
pub mod reference;
pub mod scenario;
pub mod tomography;

pub use error::{Error, Result};
pub use exec::Execution;
