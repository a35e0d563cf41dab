//! Siamese contrastive verification with zero-shot evaluation.
//!
//! A shared-weight convolutional embedding network is trained with a
//! margin contrastive loss on balanced same/different-species pairs, and
//! evaluated by thresholding the distance between embeddings. Classes with
//! too few samples are held out entirely, which gives the conventional
//! (unseen-only) and generalized (all-species) zero-shot protocols.
//!
//! Modules:
//! - [`tensor`]: NHWC tensors and a reverse-mode autodiff tape
//! - [`network`]: the embedding network, energy, score and checkpoints
//! - [`loss`]: the contrastive loss and its analytic gradient
//! - [`data`]: manifests, splits, pair sampling, augmentation, synthetic data
//! - [`metrics`]: confusion matrices, macro metrics, sweeps, pair-F1 matrices
//! - [`trainer`]: training with early stopping and protocol evaluation
//! - [`config`]: `key = value` run configuration

pub(crate) mod binio;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
