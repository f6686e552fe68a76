//! Adaptive domain generalization.
//!
//! A prototypical network learns an embedding in which each domain's points
//! cluster around their mean (the domain prototype). A classifier is then
//! trained on inputs concatenated with their domain's prototype, so at test
//! time a handful of unlabeled points from a new domain specialize it.
//!
//! Modules:
//! - [`numcore`]: matrices, MLPs, losses, SGD, finite-difference checks
//! - [`protoembed`]: prototypical training and prototype construction
//! - [`adaptive`]: augmented-input classifier with optional MMD/CORAL penalties
//! - [`benchgen`]: synthetic long-tailed multi-domain benchmarks
//! - [`evalharness`]: metrics, model selection, ablations, consistency scaling
//! - [`cli`]: the `domgen` command-line driver

pub mod adaptive;
pub mod benchgen;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod numcore;
pub mod protoembed;

pub use error::{Error, Result};
