//! Mask-conditioned generative modelling of arbitrary conditional
//! distributions, with an exact multivariate Gaussian oracle for scoring.
//!
//! A single generator learns `P(X_r | X_a = x_a)` for every disjoint pair of
//! an available mask `a` and a requested mask `r`. Training is adversarial
//! (a mask-aware discriminator with gradient penalty) or by moment matching.
//! The [`gaussian`] module supplies closed-form conditionals so that every
//! evaluation protocol can be checked against ground truth.

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod masking;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod training;

pub use error::{NcError, Result};
