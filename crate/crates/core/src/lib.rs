//! Desk-scale differentiable Gaussian splatting with curvature-guided density
//! control.
//!
//! A scene is a mixture of anisotropic Gaussian primitives rendered through a
//! fixed affine camera, either as an additive mixture or with back-to-front
//! alpha compositing. Training fits primitive parameters by gradient descent
//! and grows the mixture with one of several densification policies.
//!
//! The steepest policy accumulates a per-primitive *splitting matrix* — the
//! loss-to-output derivative at each pixel times the kernel's position
//! Hessian, averaged over the pixel measure — and splits a primitive only
//! when that matrix has a negative minimum eigenvalue. The two offspring are
//! displaced along the plus/minus minimum eigenvector and each inherits half
//! the parent opacity, which is the steepest-descent split under an opacity
//! conservation constraint. The classic gradient-norm clone/split heuristic
//! is provided as a baseline, and [`verify`] hosts independent brute-force
//! oracles that confirm the analytic machinery numerically.

pub mod density;
pub mod diff;
pub mod eigsym;
pub mod fixtures;
pub mod primitives;
pub mod render;
pub mod train;
pub mod verify;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
