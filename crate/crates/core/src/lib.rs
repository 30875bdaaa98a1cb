//! Numerical laboratory for stationary inverse transport on the unit ball.

pub mod adjoint;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod geometry;
pub mod inversion;
pub mod measures;
pub mod optics;
pub mod quadrature;
pub mod rng;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
