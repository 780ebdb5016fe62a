//! The classifier under explanation and the VAE with an RBF-calibrated
//! decoder variance, plus their training procedures.

mod classifier;
mod kmeans;
mod rbf;
mod training;
mod vae;

pub use classifier::{train_classifier, ClassifierConfig, ClassifierEpoch, ClassifierModel};
pub use kmeans::kmeans;
pub use rbf::{fit_decoder_variance, BandwidthRule, RbfConfig, RbfEpoch, RbfVariance, DEFAULT_ZETA};
pub use training::balanced_accuracy;
pub use vae::{train_vae_warmup, VaeConfig, VaeEpoch, VaeModel};
