//! Gaussian process state-space models with an efficient shared-GP transition.
//!
//! The central model (`EgpssmModel`) places a single sparse variational GP over
//! the latent transition function and pushes its scalar output through one
//! normalizing flow per latent dimension, so the cost of a transition step is
//! that of a single GP regardless of the latent dimension. The independent-GP
//! baseline (`BaselineModel`) keeps one sparse GP per dimension for comparison.
//!
//! Training maximizes a sampled evidence lower bound with reparametrized
//! rollouts; gradients come from a scalar reverse-mode tape ([`autodiff`]), so
//! every numerical routine in this crate is generic over the [`scalar::Scalar`]
//! trait and runs both in plain `f64` (fast forward evaluation) and on the tape.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flows;
pub mod kernels;
pub mod numerics;
pub mod scalar;
pub mod sparse_gp;
pub mod ssm;
pub mod train;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
