//! Alternative-side classifiers and null-side maximum-likelihood families.

pub mod density;
pub mod mlp;

pub use density::{bernoulli_mle, gaussian_mean_mle, BernoulliNull, GaussianMeanModel};
pub use mlp::{clamped_sigmoid, sigmoid, train, train_from, Architecture, InputScaling, MlpModel, TrainConfig, TrainReport};
