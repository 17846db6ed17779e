//! Gradient dynamics of shallow univariate ReLU networks.
//!
//! The crate simulates networks `f(x) = (1/alpha(m)) sum_i c_i [a_i x - b_i]_+`
//! trained by full-batch gradient descent, in both the original weights and
//! the canonical `(r, theta)` coordinates, and provides the objects needed to
//! compare the resulting fits with kernel interpolants and natural cubic
//! splines.

pub mod error;
pub mod flows;
pub mod kernels;
pub mod meanfield;
pub mod network;
pub mod presets;
pub mod runner;
pub mod scenario;
pub mod splines;

pub use error::{Error, Result};
pub use network::{
    loss, residuals, CanonicalNetwork, FullNetwork, InvariantVector, KnotList, NetworkFunction,
    SampleSet, Scaling, UvState,
};
