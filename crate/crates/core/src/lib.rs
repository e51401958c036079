//! Kernel-weighted integral gradient flows for online learning.
//!
//! Parameters evolve as `theta(t) = theta0 + ∫ K(t, tau; lambda) g(tau) dtau`, where `g`
//! is the stored descent direction of each observed sample and `K` a temporal memory
//! kernel. The crate provides the kernels, a small feedforward predictor with an exact
//! gradient, the discretized integral update and its ODE form, an adaptive
//! Dormand–Prince integrator, a sliding-window memory buffer, the streaming trainer,
//! synthetic drift scenarios and the drift-robustness metrics.

pub mod buffer;
pub mod error;
pub mod integral;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod streams;
pub mod trainer;
pub mod validation;

pub use error::{Error, Result};
pub use model::ParamVector;
