//! Probabilistic hash embeddings: bounded-memory embeddings for categorical
//! features whose table entries are mean-field Gaussian random variables,
//! learned online by turning each posterior into the next prior.
//!
//! The crate is organised bottom-up:
//!
//! - [`hashing`] maps item strings to rows of the embedding table `E` and the
//!   aggregation-weight table `W`.
//! - [`gaussian_table`] stores the variational factors, samples rows and
//!   computes KL divergences to a frozen prior.
//! - [`encoder`] assembles item embeddings and record feature vectors.
//! - [`likelihoods`] holds the heads `p(y | features)`.
//! - [`inference`] trains with the (online) ELBO and predicts by Monte Carlo.
//! - [`baselines`] covers the deterministic and expandable comparison models.
//! - [`exact_demo`] is the three-bucket linear-Gaussian forgetting example.
//! - [`harness`] runs predict-evaluate-update streams and continual splits.
//! - [`experiment`] wires configs, data and outputs together.

pub mod adam;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod exact_demo;
pub mod experiment;
pub mod gaussian_table;
pub mod harness;
pub mod hashing;
pub mod inference;
pub mod likelihoods;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
