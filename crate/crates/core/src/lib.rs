//! Steady supersonic Euler-Poisson flow in an annular nozzle sector.
//!
//! The crate computes the radially symmetric background flow, then two
//! perturbation problems around it: the three-dimensional irrotational
//! potential problem ([`potential3d`]) and the axisymmetric problem with
//! swirl, entropy and Bernoulli variations ([`axisym`]). Both are reduced to
//! radial two-point boundary value problems by a cosine Galerkin projection
//! on the cross-section ([`spectral`]) and iterated to a fixed point.

pub mod background;
pub mod error;
pub mod galerkin;
pub mod linalg;
pub mod potential3d;
pub mod spectral;
pub mod axisym;

pub use error::{Error, Location, Origin, Result};
