//! Numerical homogenization of quasilinear level-set equations in periodic media.
//!
//! Modules follow the pipeline: [`lattice`] geometry, [`coeffs`] fields,
//! [`cellsolve`] correctors, [`measures`] invariant measures and effective
//! tensors, [`front`] pulsating waves and front simulation, [`obstacle`]
//! contact-set densities.

pub mod cellsolve;
pub mod coeffs;
pub mod error;
pub mod front;
pub mod grid;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod measures;
pub mod obstacle;
pub mod spectral;

pub use error::{HomogError, Result};
