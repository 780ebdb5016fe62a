//! Counterfactual explanations for tabular classifiers by Riemannian
//! gradient descent in the latent space of a Gaussian VAE whose decoder
//! variance is calibrated with an RBF network.
//!
//! The latent metric is either the expected pull-back of the Euclidean
//! ambient metric through the stochastic decoder (RSGD) or the pull-back of
//! the classifier's representation metric (RSGD-C). Plain Euclidean latent
//! descent (SGD) is the baseline.

pub mod config;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
