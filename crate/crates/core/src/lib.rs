//! Stage-aware progress estimation and reward-aligned behavior cloning.
//!
//! The pipeline: annotated demonstrations ([`trajectory`]) are turned into
//! dense progress labels ([`labeling`]), cut into fixed-gap training windows
//! ([`sampler`]), and used to fit a two-head progress estimator
//! ([`estimator`]). Any [`predictor::ProgressPredictor`] can then weight
//! behavior-cloning chunks ([`rabc`], [`bc`]) or classify rollouts
//! ([`eval`]). [`sim`] produces synthetic data with known ground truth.

pub mod bc;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod exec;
pub mod labeling;
pub mod nn;
pub mod predictor;
pub mod rabc;
pub mod rng;
pub mod sampler;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::Exec;
