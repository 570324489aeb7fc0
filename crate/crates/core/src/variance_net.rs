//! Deterministic MLP regressing squared BNN residuals (direct estimation of
//! the total conditional variance).
//!
//! Input is the six standardized features plus the standardized BNN mean;
//! output is `softplus(raw)`, a strictly positive variance in standardized
//! target units².

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::bnn::{self, BnnModel};
use crate::config::TrainConfig;
use crate::datagen::FEATURES;
use crate::error::{Error, Result};
use crate::normalize::Standardizer;
use crate::optim::Adam;
use crate::rng::{Rng, Stream};
use crate::tensor::{softplus, tanh, Tensor};
use crate::training::{minibatches, CurvePoint, LearningCurve, PreparedSplits, Splits};

pub const VNET_INPUTS: usize = FEATURES + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in × fan_out`
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub layers: Vec<DenseLayer>,
    pub hidden_activation: Activation,
}

impl VarianceModel {
    /// He-scaled Gaussian weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], hidden_activation: Activation, rng: &mut Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                DenseLayer {
                    weights: rng.gaussian_draw(&[w[0], w[1]]).map(|v| v * scale),
                    bias: Tensor::zeros(&[w[1]]),
                }
            })
            .collect();
        Self {
            layers,
            hidden_activation,
        }
    }

    pub fn from_config(config: &TrainConfig, root: &Rng) -> Self {
        Self::new(
            VNET_INPUTS,
            &config.vnet_hidden,
            config.vnet_activation,
            &mut root.substream(Stream::VnetInit, 0),
        )
    }

    /// Every weight and bias zero, so every prediction is softplus(0) = ln 2.
    pub fn zeroed(input_dim: usize, hidden: &[usize]) -> Self {
        let mut m = Self::new(input_dim, hidden, Activation::Relu, &mut Rng::new(0));
        for l in &mut m.layers {
            l.weights = Tensor::zeros(l.weights.shape());
            l.bias = Tensor::zeros(l.bias.shape());
        }
        m
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weights.shape()[0]).collect();
        w.extend(self.layers.last().map(|l| l.weights.shape()[1]));
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("variance net has no layers"));
        }
        for l in &self.layers {
            let (_, o) = l.weights.expect_matrix("variance net weights")?;
            if l.bias.shape() != [o] {
                return Err(Error::contract("variance net bias shape mismatch"));
            }
        }
        let w = self.widths();
        if w.first() != Some(&VNET_INPUTS) || w.last() != Some(&1) {
            return Err(Error::contract(format!(
                "variance net must map {VNET_INPUTS} inputs to 1 output, has widths {w:?}"
            )));
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<[Var; 2]> {
        self.layers
            .iter()
            .map(|l| [tape.param(l.weights.clone()), tape.param(l.bias.clone())])
            .collect()
    }

    /// Predicted variance (`n×1`, after softplus) recorded on the tape.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[[Var; 2]], input: Var) -> Result<Var> {
        let mut h = input;
        let last = vars.len() - 1;
        for (i, &[w, b]) in vars.iter().enumerate() {
            let act = if i == last {
                Activation::Softplus
            } else {
                self.hidden_activation
            };
            h = tape.dense_forward(w, b, h, act)?;
        }
        Ok(h)
    }

    /// Predicted variance for each row of an `n×7` standardized input.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weights)?;
            let m = l.bias.len();
            for row in h.data_mut().chunks_mut(m) {
                for (o, b) in row.iter_mut().zip(l.bias.data()) {
                    *o += b;
                }
            }
            h = if i == last {
                h.map(softplus)
            } else {
                match self.hidden_activation {
                    Activation::Tanh => h.map(tanh),
                    Activation::Relu => h.map(|v| v.max(0.0)),
                    Activation::Softplus => h.map(softplus),
                    Activation::Identity => h,
                }
            };
        }
        Ok(h.into_data())
    }
}

/// Appends the standardized BNN mean to the standardized features.
pub fn variance_inputs(x: &Tensor, y_hat: &[f64]) -> Result<Tensor> {
    let (n, d) = x.expect_matrix("variance net features")?;
    if d != FEATURES || y_hat.len() != n {
        return Err(Error::contract(format!(
            "variance net needs n×{FEATURES} features and n means, got {n}×{d} and {}",
            y_hat.len()
        )));
    }
    let mut data = Vec::with_capacity(n * VNET_INPUTS);
    for (row, &m) in x.data().chunks(d).zip(y_hat) {
        data.extend_from_slice(row);
        data.push(m);
    }
    Tensor::matrix(n, VNET_INPUTS, data)
}

/// σ_tot² in standardized target units² for standardized `x` and BNN mean `y_hat`.
pub fn predict_total_variance(model: &VarianceModel, x: &Tensor, y_hat: &[f64]) -> Result<Vec<f64>> {
    model.forward(&variance_inputs(x, y_hat)?)
}

/// Mean over the batch of `(predicted_var − residual²)²`.
pub fn direct_estimation_loss(predicted_var: &[f64], residual: &[f64]) -> Result<f64> {
    if predicted_var.len() != residual.len() {
        return Err(Error::contract("direct_estimation_loss: length mismatch"));
    }
    if predicted_var.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predicted_var
        .iter()
        .zip(residual)
        .map(|(v, r)| {
            let gap = v - r * r;
            gap * gap
        })
        .sum();
    Ok(total / predicted_var.len() as f64)
}

/// [`direct_estimation_loss`] on the tape; `residual_sq` is a constant.
pub fn direct_estimation_on_tape(tape: &mut Tape, predicted_var: Var, residual_sq: Var) -> Result<Var> {
    let gap = tape.sub(predicted_var, residual_sq)?;
    let sq = tape.square(gap);
    Ok(tape.mean(sq))
}

/// Source of the predictive mean whose residuals the variance net learns.
pub trait MeanPredictor {
    /// Standardized predictive means for standardized inputs `x`.
    fn predict_mean(&self, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<Vec<f64>>;
}

impl MeanPredictor for BnnModel {
    fn predict_mean(&self, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        bnn::predict_mean(self, x, samples, rng)
    }
}

pub(crate) struct VnetTrainer {
    adam: Adam,
    shuffle: Rng,
    batch_size: usize,
}

impl VnetTrainer {
    pub fn new(model: &VarianceModel, config: &TrainConfig, root: &Rng) -> Self {
        Self {
            adam: Adam::new(config.adam, config.vnet_learning_rate, model.parameters()),
            shuffle: root.substream(Stream::VnetShuffle, 0),
            batch_size: config.batch_size,
        }
    }

    /// One pass over all minibatches. Residuals enter as constants, so no
    /// gradient reaches whatever produced `y_hat`.
    pub fn run_epoch(
        &mut self,
        model: &mut VarianceModel,
        inputs: &Tensor,
        residual_sq: &[f64],
        epoch: usize,
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..residual_sq.len()).collect();
        self.shuffle.shuffle(&mut order);
        for (step, batch) in minibatches(&order, self.batch_size).enumerate() {
            let x = inputs.select_rows(batch);
            let r2: Vec<f64> = batch.iter().map(|&i| residual_sq[i]).collect();
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let xv = tape.constant(x);
            let rv = tape.constant(Tensor::matrix(batch.len(), 1, r2)?);
            let pred = model.forward_on_tape(&mut tape, &vars, xv)?;
            let loss = direct_estimation_on_tape(&mut tape, pred, rv)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    network: "variance net",
                    epoch,
                    step,
                    loss: value,
                });
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.iter().flatten().map(|&v| grads.take(v)).collect();
            self.adam.step(model.parameters_mut(), &g);
        }
        Ok(())
    }
}

pub(crate) fn squared_residuals(y_hat: &[f64], y: &[f64]) -> Vec<f64> {
    y_hat.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).collect()
}

/// Curve value: RMSE between predicted σ_tot² and squared residuals, in target units².
pub(crate) fn vnet_curve_point(
    model: &VarianceModel,
    epoch: usize,
    means: &[Option<Vec<f64>>; 3],
    data: &PreparedSplits,
    standardizer: &Standardizer,
) -> Result<CurvePoint> {
    let mut values = [None; 3];
    let scale = standardizer.target_std * standardizer.target_std;
    for (slot, split) in data.iter() {
        if let Some(m) = &means[slot] {
            let pred = predict_total_variance(model, &split.x, m)?;
            let r: Vec<f64> = m.iter().zip(&split.y).map(|(p, t)| p - t).collect();
            values[slot] = Some(direct_estimation_loss(&pred, &r)?.sqrt() * scale);
        }
    }
    Ok(CurvePoint::from_slots(epoch + 1, values))
}

/// Trains the variance net against residuals of `mean_source`, which is
/// left untouched. Residual means are recomputed every epoch from the
/// `Residuals` substream for that epoch.
pub fn train_variance_net(
    model: &mut VarianceModel,
    mean_source: &dyn MeanPredictor,
    standardizer: &Standardizer,
    splits: &Splits<'_>,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<LearningCurve> {
    config.validate()?;
    model.validate()?;
    bnn::check_train_split(splits.train)?;
    let data = PreparedSplits::new(splits, standardizer);
    let mut trainer = VnetTrainer::new(model, config, rng);
    let mut curve = LearningCurve::default();
    for epoch in 0..config.epochs {
        let mut res_rng = rng.substream(Stream::Residuals, epoch as u32);
        let y_hat = mean_source.predict_mean(&data.train.x, config.residual_samples, &mut res_rng)?;
        let inputs = variance_inputs(&data.train.x, &y_hat)?;
        trainer.run_epoch(model, &inputs, &squared_residuals(&y_hat, &data.train.y), epoch)?;
        if config.is_eval_epoch(epoch) {
            let mut means: [Option<Vec<f64>>; 3] = [None, None, None];
            for (slot, split) in data.iter() {
                let mut r = rng.substream(Stream::Evaluation, (epoch * 3 + slot) as u32);
                means[slot] = Some(mean_source.predict_mean(&split.x, config.eval_samples, &mut r)?);
            }
            curve
                .points
                .push(vnet_curve_point(model, epoch, &means, &data, standardizer)?);
        }
    }
    Ok(curve)
}
