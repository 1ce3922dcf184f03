//! Adversarial neural trip recommendation.
//!
//! Given a trip query (user, start POI, time budget) the crate retrieves a
//! fixed-size candidate set from a trip hypergraph plus spatial padding,
//! generates a feasible ordered trip with an attention encoder-decoder, and
//! trains that generator with demonstration pre-training followed by
//! discriminator-rewarded policy gradients.

pub mod candidates;
pub mod cli;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod geo;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
