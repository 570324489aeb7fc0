//! Mean-field variational Bayesian MLP.
//!
//! Every weight and bias has an independent Gaussian posterior
//! `N(mu, softplus(rho)²)`. Training minimizes the minibatch negative ELBO
//! through the reparameterization `w = mu + softplus(rho)·eps`; prediction
//! averages `S` weight draws to get the predictive mean and the epistemic
//! variance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::config::TrainConfig;
use crate::datagen::{Dataset, FEATURES};
use crate::error::{Error, Result};
use crate::normalize::{Prepared, Standardizer};
use crate::optim::Adam;
use crate::rng::{Rng, Stream};
use crate::tensor::{inverse_softplus, softplus, tanh, Tensor};
use crate::training::{minibatches, rmse, CurvePoint, LearningCurve, PreparedSplits, Splits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalLayer {
    /// `fan_in × fan_out`
    pub weight_mu: Tensor,
    pub weight_rho: Tensor,
    pub bias_mu: Tensor,
    pub bias_rho: Tensor,
}

impl VariationalLayer {
    /// Fan-in scaled Gaussian means, zero bias means, and every posterior std
    /// equal to `init_sigma`.
    pub fn new(fan_in: usize, fan_out: usize, init_sigma: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weight_mu = rng.gaussian_draw(&[fan_in, fan_out]).map(|v| v * scale);
        let rho = inverse_softplus(init_sigma);
        Self {
            weight_mu,
            weight_rho: Tensor::full(&[fan_in, fan_out], rho),
            bias_mu: Tensor::zeros(&[fan_out]),
            bias_rho: Tensor::full(&[fan_out], rho),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight_mu.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight_mu.shape()[1]
    }

    /// Draws the standard-normal noise for one weight sample: weights first,
    /// then biases. Both forward paths consume the RNG in this order.
    fn draw_noise(&self, rng: &mut Rng) -> (Tensor, Tensor) {
        let w = rng.gaussian_draw(self.weight_mu.shape());
        let b = rng.gaussian_draw(self.bias_mu.shape());
        (w, b)
    }

    fn sample(mu: &Tensor, rho: &Tensor, eps: &Tensor) -> Tensor {
        let sigma = rho.map(softplus);
        let spread = sigma.zip_map(eps, |s, e| s * e).expect("same shape");
        mu.zip_map(&spread, |m, d| m + d).expect("same shape")
    }

    fn check(&self) -> Result<()> {
        let (i, o) = self.weight_mu.expect_matrix("weight_mu")?;
        if self.weight_rho.shape() != [i, o]
            || self.bias_mu.shape() != [o]
            || self.bias_rho.shape() != [o]
        {
            return Err(Error::contract("variational layer tensors have inconsistent shapes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub layers: Vec<VariationalLayer>,
    pub hidden_activation: Activation,
    pub prior_sigma: f64,
}

/// Tape handles for every posterior parameter, `[w_mu, w_rho, b_mu, b_rho]` per layer.
#[derive(Debug, Clone)]
pub struct BnnVars {
    pub layers: Vec<[Var; 4]>,
}

impl BnnVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flatten().copied()
    }
}

impl BnnModel {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        prior_sigma: f64,
        init_sigma: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| VariationalLayer::new(w[0], w[1], init_sigma, rng))
            .collect();
        Self {
            layers,
            hidden_activation,
            prior_sigma,
        }
    }

    /// Six-feature model as configured, initialized from the `BnnInit` stream.
    pub fn from_config(config: &TrainConfig, root: &Rng) -> Self {
        Self::new(
            FEATURES,
            &config.bnn_hidden,
            config.bnn_activation,
            config.prior_sigma,
            config.init_posterior_sigma,
            &mut root.substream(Stream::BnnInit, 0),
        )
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.fan_in()).collect();
        w.extend(self.layers.last().map(|l| l.fan_out()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("BNN has no layers"));
        }
        for l in &self.layers {
            l.check()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::contract("BNN layer widths do not chain"));
            }
        }
        if self.layers.last().map(|l| l.fan_out()) != Some(1) {
            return Err(Error::contract("BNN must have a single output"));
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight_mu, &l.weight_rho, &l.bias_mu, &l.bias_rho])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    &mut l.weight_mu,
                    &mut l.weight_rho,
                    &mut l.bias_mu,
                    &mut l.bias_rho,
                ]
            })
            .collect()
    }

    /// Sets every posterior std to (numerically) zero.
    pub fn collapse_posterior(&mut self) {
        for l in &mut self.layers {
            l.weight_rho = Tensor::full(l.weight_rho.shape(), -1e3);
            l.bias_rho = Tensor::full(l.bias_rho.shape(), -1e3);
        }
    }

    pub fn register(&self, tape: &mut Tape) -> BnnVars {
        BnnVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    [
                        tape.param(l.weight_mu.clone()),
                        tape.param(l.weight_rho.clone()),
                        tape.param(l.bias_mu.clone()),
                        tape.param(l.bias_rho.clone()),
                    ]
                })
                .collect(),
        }
    }

    /// KL(posterior ‖ prior) summed over all weights and biases.
    pub fn kl(&self) -> Result<f64> {
        let mut total = 0.0;
        for l in &self.layers {
            for (mu, rho) in [(&l.weight_mu, &l.weight_rho), (&l.bias_mu, &l.bias_rho)] {
                let sigma: Vec<f64> = rho.data().iter().map(|&r| softplus(r)).collect();
                total += kl_gaussian(mu.data(), &sigma, self.prior_sigma)?;
            }
        }
        Ok(total)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }
}

/// `Σ ln(σ_p/σ_q) + (σ_q² + μ_q²)/(2σ_p²) − ½` for `q = N(μ_q, σ_q²)`, `p = N(0, σ_p²)`.
pub fn kl_gaussian(post_mu: &[f64], post_sigma: &[f64], prior_sigma: f64) -> Result<f64> {
    if post_mu.len() != post_sigma.len() {
        return Err(Error::contract("kl_gaussian: mu and sigma lengths differ"));
    }
    if !(prior_sigma > 0.0) {
        return Err(Error::contract(format!(
            "kl_gaussian: prior sigma must be positive, got {prior_sigma}"
        )));
    }
    let denom = 2.0 * prior_sigma * prior_sigma;
    let mut total = 0.0;
    for (&mu, &sigma) in post_mu.iter().zip(post_sigma) {
        if !(sigma > 0.0) {
            return Err(Error::contract(format!(
                "kl_gaussian: posterior sigma must be positive, got {sigma}"
            )));
        }
        total += (prior_sigma / sigma).ln() + (sigma * sigma + mu * mu) / denom - 0.5;
    }
    Ok(total)
}

/// [`kl_gaussian`] recorded on the tape.
pub fn kl_on_tape(tape: &mut Tape, vars: &BnnVars, prior_sigma: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for &[w_mu, w_rho, b_mu, b_rho] in &vars.layers {
        for (mu, rho) in [(w_mu, w_rho), (b_mu, b_rho)] {
            count += tape.value(mu).len();
            let sigma = tape.softplus(rho);
            let log_sigma = tape.log(sigma);
            let s2 = tape.square(sigma);
            let m2 = tape.square(mu);
            let q = tape.add(s2, m2)?;
            let q = tape.scale(q, 1.0 / (2.0 * prior_sigma * prior_sigma));
            let term = tape.sub(q, log_sigma)?;
            let s = tape.sum(term);
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s)?,
            });
        }
    }
    let total = total.ok_or_else(|| Error::contract("kl_on_tape: no parameters"))?;
    Ok(tape.offset(total, count as f64 * (prior_sigma.ln() - 0.5)))
}

/// One reparameterized forward pass on the tape; output is `n×1`.
pub fn reparam_forward_on_tape(
    tape: &mut Tape,
    model: &BnnModel,
    vars: &BnnVars,
    x: Var,
    rng: &mut Rng,
) -> Result<Var> {
    let mut h = x;
    for (i, (layer, &[w_mu, w_rho, b_mu, b_rho])) in
        model.layers.iter().zip(&vars.layers).enumerate()
    {
        let (eps_w, eps_b) = layer.draw_noise(rng);
        let w = sample_on_tape(tape, w_mu, w_rho, eps_w)?;
        let b = sample_on_tape(tape, b_mu, b_rho, eps_b)?;
        h = tape.dense_forward(w, b, h, model.activation(i))?;
    }
    Ok(h)
}

fn sample_on_tape(tape: &mut Tape, mu: Var, rho: Var, eps: Tensor) -> Result<Var> {
    let eps = tape.constant(eps);
    let sigma = tape.softplus(rho);
    let spread = tape.mul(sigma, eps)?;
    tape.add(mu, spread)
}

/// One reparameterized forward pass without recording; returns the `n` outputs.
pub fn reparam_forward(model: &BnnModel, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
    let (_, d) = x.expect_matrix("BNN input")?;
    if d != model.input_dim() {
        return Err(Error::contract(format!(
            "BNN expects {} features, input has {d}",
            model.input_dim()
        )));
    }
    let mut h = x.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let (eps_w, eps_b) = layer.draw_noise(rng);
        let w = VariationalLayer::sample(&layer.weight_mu, &layer.weight_rho, &eps_w);
        let b = VariationalLayer::sample(&layer.bias_mu, &layer.bias_rho, &eps_b);
        h = h.matmul(&w)?;
        let m = b.len();
        for row in h.data_mut().chunks_mut(m) {
            for (o, bias) in row.iter_mut().zip(b.data()) {
                *o += bias;
            }
        }
        h = match model.activation(i) {
            Activation::Tanh => h.map(tanh),
            Activation::Relu => h.map(|v| v.max(0.0)),
            Activation::Softplus => h.map(softplus),
            Activation::Identity => h,
        };
    }
    Ok(h.into_data())
}

/// Negative ELBO for one minibatch recorded on the tape:
/// mean over `mc_samples` of the Gaussian NLL summed over the batch, plus
/// `kl_weight · KL`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_on_tape(
    tape: &mut Tape,
    model: &BnnModel,
    vars: &BnnVars,
    x: &Tensor,
    y: &[f64],
    rng: &mut Rng,
    mc_samples: usize,
    kl_weight: f64,
    likelihood_sigma: f64,
) -> Result<Var> {
    if y.is_empty() {
        return Err(Error::contract("elbo: empty batch"));
    }
    if x.rows() != y.len() {
        return Err(Error::contract("elbo: feature and target counts differ"));
    }
    if mc_samples == 0 {
        return Err(Error::contract("elbo: need at least one MC sample"));
    }
    let n = y.len();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(Tensor::matrix(n, 1, y.to_vec())?);
    let mut nll_sum: Option<Var> = None;
    for _ in 0..mc_samples {
        let out = reparam_forward_on_tape(tape, model, vars, xv, rng)?;
        let diff = tape.sub(out, yv)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        nll_sum = Some(match nll_sum {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let nll = tape.scale(
        nll_sum.expect("mc_samples >= 1"),
        1.0 / (2.0 * likelihood_sigma * likelihood_sigma * mc_samples as f64),
    );
    let nll = tape.offset(nll, n as f64 * (likelihood_sigma.ln() + 0.5 * (2.0 * PI).ln()));
    if kl_weight == 0.0 {
        return Ok(nll);
    }
    let kl = kl_on_tape(tape, vars, model.prior_sigma)?;
    let kl = tape.scale(kl, kl_weight);
    tape.add(nll, kl)
}

/// Value of the negative ELBO for one minibatch.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    model: &BnnModel,
    x: &Tensor,
    y: &[f64],
    rng: &mut Rng,
    mc_samples: usize,
    kl_weight: f64,
    likelihood_sigma: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let loss = elbo_on_tape(
        &mut tape,
        model,
        &vars,
        x,
        y,
        rng,
        mc_samples,
        kl_weight,
        likelihood_sigma,
    )?;
    tape.value(loss).item()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpistemicPrediction {
    pub mean: f64,
    /// Unbiased sample variance of the `mc_samples` network outputs.
    pub epistemic_var: f64,
    pub mc_samples: usize,
}

/// Predictive mean and epistemic variance for every row of `x` from
/// `samples` weight draws. Each draw is shared across all rows.
pub fn predict_epistemic(
    model: &BnnModel,
    x: &Tensor,
    samples: usize,
    rng: &mut Rng,
) -> Result<Vec<EpistemicPrediction>> {
    if samples < 2 {
        return Err(Error::contract(format!(
            "predict_epistemic needs at least 2 samples, got {samples}"
        )));
    }
    let first = reparam_forward(model, x, rng)?;
    let n = first.len();
    // Shifted sums around the first draw: exact zero variance when all draws agree.
    let mut shift_sum = vec![0.0; n];
    let mut shift_sq = vec![0.0; n];
    for _ in 1..samples {
        let out = reparam_forward(model, x, rng)?;
        for i in 0..n {
            let d = out[i] - first[i];
            shift_sum[i] += d;
            shift_sq[i] += d * d;
        }
    }
    let s = samples as f64;
    Ok((0..n)
        .map(|i| {
            let var = (shift_sq[i] - shift_sum[i] * shift_sum[i] / s) / (s - 1.0);
            EpistemicPrediction {
                mean: first[i] + shift_sum[i] / s,
                epistemic_var: var.max(0.0),
                mc_samples: samples,
            }
        })
        .collect())
}

/// Predictive means only, as used for residuals and learning curves.
pub fn predict_mean(model: &BnnModel, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    match samples {
        0 => return Err(Error::contract("predict_mean needs at least 1 sample")),
        1 => return reparam_forward(model, x, rng),
        _ => {}
    }
    Ok(predict_epistemic(model, x, samples, rng)?
        .into_iter()
        .map(|p| p.mean)
        .collect())
}

/// Optimizer state and RNG streams for BNN training. One instance drives
/// one run; `run_epoch` must be called with consecutive epoch indices.
pub(crate) struct BnnTrainer {
    adam: Adam,
    shuffle: Rng,
    sampling: Rng,
    kl_weight: f64,
    batch_size: usize,
    mc_samples: usize,
    likelihood_sigma: f64,
}

impl BnnTrainer {
    pub fn new(model: &BnnModel, train_len: usize, config: &TrainConfig, root: &Rng) -> Self {
        let batches = train_len.div_ceil(config.batch_size).max(1);
        Self {
            adam: Adam::new(config.adam, config.bnn_learning_rate, model.parameters()),
            shuffle: root.substream(Stream::BnnShuffle, 0),
            sampling: root.substream(Stream::BnnSampling, 0),
            kl_weight: config.kl_weight.unwrap_or(1.0 / batches as f64),
            batch_size: config.batch_size,
            mc_samples: config.mc_train_samples,
            likelihood_sigma: config.likelihood_sigma,
        }
    }

    pub fn run_epoch(&mut self, model: &mut BnnModel, train: &Prepared, epoch: usize) -> Result<()> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.shuffle.shuffle(&mut order);
        for (step, batch) in minibatches(&order, self.batch_size).enumerate() {
            let x = train.x.select_rows(batch);
            let y: Vec<f64> = batch.iter().map(|&i| train.y[i]).collect();
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let loss = elbo_on_tape(
                &mut tape,
                model,
                &vars,
                &x,
                &y,
                &mut self.sampling,
                self.mc_samples,
                self.kl_weight,
                self.likelihood_sigma,
            )?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    network: "bnn",
                    epoch,
                    step,
                    loss: value,
                });
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.all().map(|v| grads.take(v)).collect();
            if g.iter().any(|t| !t.all_finite()) {
                return Err(Error::Divergence {
                    network: "bnn",
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            self.adam.step(model.parameters_mut(), &g);
        }
        Ok(())
    }
}

/// MC predictive means for every prepared split, drawn from per-epoch
/// evaluation substreams.
pub(crate) fn evaluation_means(
    model: &BnnModel,
    data: &PreparedSplits,
    samples: usize,
    root: &Rng,
    epoch: usize,
) -> Result<[Option<Vec<f64>>; 3]> {
    let mut out: [Option<Vec<f64>>; 3] = [None, None, None];
    for (slot, split) in data.iter() {
        let mut rng = root.substream(Stream::Evaluation, (epoch * 3 + slot) as u32);
        out[slot] = Some(predict_mean(model, &split.x, samples, &mut rng)?);
    }
    Ok(out)
}

pub(crate) fn bnn_curve_point(
    epoch: usize,
    means: &[Option<Vec<f64>>; 3],
    data: &PreparedSplits,
    standardizer: &Standardizer,
) -> CurvePoint {
    let mut values = [None; 3];
    for (slot, split) in data.iter() {
        if let Some(m) = &means[slot] {
            values[slot] = Some(rmse(m, &split.y) * standardizer.target_std);
        }
    }
    CurvePoint::from_slots(epoch + 1, values)
}

/// Trains `model` in place on standardized data; returns the RMSE learning
/// curve in target units, sampled every `eval_interval` epochs.
pub fn train_bnn(
    model: &mut BnnModel,
    standardizer: &Standardizer,
    splits: &Splits<'_>,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<LearningCurve> {
    config.validate()?;
    model.validate()?;
    check_train_split(splits.train)?;
    let data = PreparedSplits::new(splits, standardizer);
    let mut trainer = BnnTrainer::new(model, data.train.len(), config, rng);
    let mut curve = LearningCurve::default();
    for epoch in 0..config.epochs {
        trainer.run_epoch(model, &data.train, epoch)?;
        if config.is_eval_epoch(epoch) {
            let means = evaluation_means(model, &data, config.eval_samples, rng, epoch)?;
            curve
                .points
                .push(bnn_curve_point(epoch, &means, &data, standardizer));
        }
    }
    Ok(curve)
}

pub(crate) fn check_train_split(train: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    Ok(())
}
