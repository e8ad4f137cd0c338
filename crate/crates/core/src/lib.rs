//! Deep neural network ensembles for univariate time series classification.
//!
//! Six probabilistic 1-D network architectures are trained from scratch
//! with a small deterministic engine, combined by averaging their class
//! probabilities, fine-tuned across datasets, and compared with rank-based
//! nonparametric statistics.
//!
//! The network stack is generic over the scalar type ([`Scalar`], `f32` or
//! `f64`); the aliases at the crate root fix it to `f64`, which is what the
//! command-line tool and checkpoints use. Statistics run on exact rational
//! accuracies or plain `f64`.

pub mod arch;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod training;
pub mod transfer;
pub mod util;

pub use error::{Error, MemberFailure, Result};
pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type Layer64 = nn::Layer<f64>;
pub type ModelGraph64 = arch::ModelGraph<f64>;
pub type TrainedModel64 = training::TrainedModel<f64>;
pub type EnsembleSpec64 = ensemble::EnsembleSpec<f64>;
