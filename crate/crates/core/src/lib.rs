//! Monte Carlo derivative formulas for SDEs driven by subordinated Brownian
//! motion `W_{S_t}`, where `S` is an `alpha/2`-stable subordinator.
//!
//! The crate is organised bottom-up:
//!
//! * [`stable`] samples positive stable variables, subordinator paths and
//!   Brownian motion read off a subordinator clock.
//! * [`timechange`] holds deterministic increasing clocks, their
//!   `eps`-smoothing and inverse, and stochastic integrals against `W_ell`.
//! * [`sde`] solves the driven SDE and its derivative flow by Euler steps.
//! * [`bel`] contains the gradient estimators (stable and Brownian weights,
//!   a finite-difference oracle) and the scaling checks built on them.
//! * [`spde`] runs the spectral Galerkin stochastic heat equation.

pub mod bel;
pub mod error;
pub mod parallel;
pub mod path;
pub mod sde;
pub mod spde;
pub mod stable;
pub mod stats;
pub mod timechange;

pub use bel::{EstimatorConfig, EstimatorTag, GradientEstimate, TestFunction};
pub use error::{Error, Result};
pub use path::VectorPath;
pub use sde::{DiffusionMatrix, DriftModel, FlowState};
pub use spde::{GalerkinState, NonlinearityF, SpectralModel};
pub use stable::{Clock, RandomStream, StableParams, SubordinatorPath};
pub use timechange::{CadlagIncreasingPath, InversePath, KnotRule, SmoothedPath};
