//! Randomly masked subnetwork training for one-hidden-layer ReLU networks.
//!
//! Each global iteration samples a binary mask that carves the hidden layer
//! into `p` subnetworks, trains every subnetwork for `tau` full-batch gradient
//! steps starting from the shared weights, and folds the local updates back
//! into the shared weights with per-neuron aggregation weights. Dropout,
//! multi-sample dropout and independent subnetwork training all fall out of
//! the same loop by configuration.
//!
//! Alongside the trainer the crate computes finite-width, masked and
//! infinite-width neural tangent kernels, and ships Monte Carlo and exact
//! algebraic checks for the moment identities that govern masked training.
//!
//! Module map:
//! - [`data`]: datasets of unit-norm, pairwise non-co-aligned features
//! - [`model`]: forward passes, losses, gradients
//! - [`masks`]: Bernoulli and categorical mask sampling, aggregation weights
//! - [`trainer`]: the masked training loop and its trace
//! - [`kernel`]: NTK matrices and extreme eigenvalues
//! - [`analysis`]: identity/moment checks, error-region and rate estimates
//! - [`harness`]: parameter sweeps and phase dynamics summaries

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod masks;
pub mod model;
pub mod seed;
pub mod trainer;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::{KernelKind, KernelMatrix};
pub use masks::{MaskDistribution, MaskMatrix, MaskStats};
pub use model::ModelState;
pub use trainer::{GlobalTrace, TrainConfig};
