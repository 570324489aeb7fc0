//! Dual-network predictive uncertainty for regression.
//!
//! A mean-field variational BNN supplies the predictive mean and the
//! epistemic variance; a deterministic MLP trained on the BNN's squared
//! residuals supplies the total variance; their difference is the aleatoric
//! variance. Everything trains through the small reverse-mode tape in
//! [`autodiff`].

pub mod autodiff;
pub mod bnn;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dual;
pub mod error;
pub mod normalize;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod variance_net;

pub use config::TrainConfig;
pub use datagen::{BenchmarkSpec, Dataset, FeatureSpec, NoiseModel, Split};
pub use dual::{decompose, joint_train, DualModel, JointOptions, PredictiveBundle};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
