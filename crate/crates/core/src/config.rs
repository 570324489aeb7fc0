use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;

/// Architecture, optimizer and schedule for the dual-network workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub bnn_hidden: Vec<usize>,
    pub bnn_activation: Activation,
    pub vnet_hidden: Vec<usize>,
    pub vnet_activation: Activation,
    /// Std of the zero-mean Gaussian weight prior.
    pub prior_sigma: f64,
    /// Fixed Gaussian likelihood std of the BNN, in standardized target units.
    pub likelihood_sigma: f64,
    /// Initial posterior std, softplus(rho) at initialization.
    pub init_posterior_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bnn_learning_rate: f64,
    pub vnet_learning_rate: f64,
    pub adam: AdamConfig,
    /// Weight draws per minibatch in the ELBO estimate.
    pub mc_train_samples: usize,
    /// Weight draws per prediction (S).
    pub predict_samples: usize,
    /// Weight draws averaged into the per-epoch residuals fed to the variance
    /// net. With 1, each residual comes from a single posterior draw, so its
    /// expected square includes the epistemic variance.
    pub residual_samples: usize,
    /// Epochs between learning-curve evaluations.
    pub eval_interval: usize,
    /// Weight draws used for learning-curve evaluation.
    pub eval_samples: usize,
    /// KL multiplier; `None` means 1 / (minibatches per epoch).
    pub kl_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bnn_hidden: vec![20, 20, 20],
            bnn_activation: Activation::Tanh,
            vnet_hidden: vec![20, 20, 20],
            vnet_activation: Activation::Relu,
            prior_sigma: 1.0,
            likelihood_sigma: 0.02,
            init_posterior_sigma: 0.05,
            epochs: 2000,
            batch_size: 64,
            bnn_learning_rate: 1e-3,
            vnet_learning_rate: 3e-3,
            adam: AdamConfig::default(),
            mc_train_samples: 1,
            predict_samples: 100,
            residual_samples: 1,
            eval_interval: 50,
            eval_samples: 10,
            kl_weight: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be positive, got {v}")))
            }
        };
        let at_least = |name: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be >= {min}, got {v}")))
            }
        };
        positive("prior_sigma", self.prior_sigma)?;
        positive("likelihood_sigma", self.likelihood_sigma)?;
        positive("init_posterior_sigma", self.init_posterior_sigma)?;
        positive("bnn_learning_rate", self.bnn_learning_rate)?;
        positive("vnet_learning_rate", self.vnet_learning_rate)?;
        at_least("epochs", self.epochs, 1)?;
        at_least("batch_size", self.batch_size, 1)?;
        at_least("mc_train_samples", self.mc_train_samples, 1)?;
        at_least("predict_samples", self.predict_samples, 2)?;
        at_least("residual_samples", self.residual_samples, 1)?;
        at_least("eval_samples", self.eval_samples, 2)?;
        at_least("eval_interval", self.eval_interval, 1)?;
        if self.bnn_hidden.contains(&0) || self.vnet_hidden.contains(&0) {
            return Err(Error::contract("hidden layer widths must be positive"));
        }
        if let Some(w) = self.kl_weight {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::contract(format!("kl_weight must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Number of learning-curve points a run of `epochs` records.
    pub fn curve_len(&self) -> usize {
        self.epochs.div_ceil(self.eval_interval)
    }

    pub(crate) fn is_eval_epoch(&self, epoch: usize) -> bool {
        (epoch + 1) % self.eval_interval == 0 || epoch + 1 == self.epochs
    }
}
