//! Flatness analysis for discrete-time nonlinear systems.
//!
//! The crate decides whether a system x+ = f(x, u) admits a flat output,
//! constructs one when it does, and independently verifies candidate flat
//! outputs either symbolically or through a numeric rank certificate.

pub mod decompose;
pub mod geometry;
pub mod symbolic;
pub mod system;
pub mod verify;
