//! The dual-network workflow: a variational BNN for the predictive mean and
//! epistemic variance, a direct-estimation network for the total variance,
//! and the law-of-total-variance split into an aleatoric part.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autodiff::{Tape, Var};
use crate::bnn::{self, BnnModel, BnnTrainer};
use crate::config::TrainConfig;
use crate::datagen::FeatureRow;
use crate::error::{Error, Result};
use crate::normalize::Standardizer;
use crate::rng::{Rng, Stream};
use crate::training::{LearningCurve, PreparedSplits, Splits};
use crate::variance_net::{self, VarianceModel, VnetTrainer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub bnn: LearningCurve,
    pub vnet: LearningCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    pub bnn: BnnModel,
    pub vnet: VarianceModel,
    /// Shared by both networks.
    pub standardizer: Standardizer,
    pub history: TrainingHistory,
    pub config: TrainConfig,
}

/// Per-sample prediction in target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBundle {
    pub mean: f64,
    pub epistemic_var: f64,
    pub total_var: f64,
    pub aleatoric_var: f64,
    /// Set when the total variance fell below the epistemic variance and the
    /// aleatoric part was clamped to zero.
    pub clamped: bool,
}

impl PredictiveBundle {
    pub fn from_parts(mean: f64, epistemic_var: f64, total_var: f64) -> Result<Self> {
        let (aleatoric_var, clamped) = decompose(total_var, epistemic_var)?;
        Ok(Self {
            mean,
            epistemic_var,
            total_var,
            aleatoric_var,
            clamped,
        })
    }
}

/// Aleatoric variance `σ_tot² − σ₁²`, clamped to zero (with the flag set)
/// when the two estimators cross.
pub fn decompose(total_var: f64, epistemic_var: f64) -> Result<(f64, bool)> {
    if !(total_var >= 0.0) || !(epistemic_var >= 0.0) {
        return Err(Error::contract(format!(
            "decompose: variances must be non-negative, got total {total_var}, epistemic {epistemic_var}"
        )));
    }
    if total_var < epistemic_var {
        Ok((0.0, true))
    } else {
        Ok((total_var - epistemic_var, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointOptions {
    /// When false only the BNN trains; the variance net keeps its initial weights.
    pub train_variance_net: bool,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            train_variance_net: true,
        }
    }
}

/// Trains both networks from scratch, alternating per epoch: one ELBO pass
/// over the BNN minibatches, then one direct-estimation pass over residuals
/// of the freshly updated BNN. All randomness derives from `config.seed`.
pub fn joint_train(splits: &Splits<'_>, config: &TrainConfig, options: JointOptions) -> Result<DualModel> {
    config.validate()?;
    bnn::check_train_split(splits.train)?;
    let root = Rng::new(config.seed);
    let standardizer = Standardizer::fit(splits.train);
    let data = PreparedSplits::new(splits, &standardizer);

    let mut bnn = BnnModel::from_config(config, &root);
    let mut vnet = VarianceModel::from_config(config, &root);
    let mut bnn_trainer = BnnTrainer::new(&bnn, data.train.len(), config, &root);
    let mut vnet_trainer = VnetTrainer::new(&vnet, config, &root);
    let mut history = TrainingHistory::default();

    for epoch in 0..config.epochs {
        bnn_trainer.run_epoch(&mut bnn, &data.train, epoch)?;
        if options.train_variance_net {
            let mut res_rng = root.substream(Stream::Residuals, epoch as u32);
            let y_hat = bnn::predict_mean(&bnn, &data.train.x, config.residual_samples, &mut res_rng)?;
            let inputs = variance_net::variance_inputs(&data.train.x, &y_hat)?;
            let r2 = variance_net::squared_residuals(&y_hat, &data.train.y);
            vnet_trainer.run_epoch(&mut vnet, &inputs, &r2, epoch)?;
        }
        if config.is_eval_epoch(epoch) {
            let means = bnn::evaluation_means(&bnn, &data, config.eval_samples, &root, epoch)?;
            history
                .bnn
                .points
                .push(bnn::bnn_curve_point(epoch, &means, &data, &standardizer));
            if options.train_variance_net {
                history.vnet.points.push(variance_net::vnet_curve_point(
                    &vnet,
                    epoch,
                    &means,
                    &data,
                    &standardizer,
                )?);
            }
        }
    }

    Ok(DualModel {
        bnn,
        vnet,
        standardizer,
        history,
        config: config.clone(),
    })
}

impl DualModel {
    /// Mean, epistemic, total and aleatoric variance for each row, in target units.
    pub fn predict(&self, features: &[FeatureRow], samples: usize, rng: &mut Rng) -> Result<Vec<PredictiveBundle>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.standardizer.features(features);
        let epistemic = bnn::predict_epistemic(&self.bnn, &x, samples, rng)?;
        let means: Vec<f64> = epistemic.iter().map(|p| p.mean).collect();
        let total = variance_net::predict_total_variance(&self.vnet, &x, &means)?;
        epistemic
            .iter()
            .zip(total)
            .map(|(e, t)| {
                PredictiveBundle::from_parts(
                    self.standardizer.target_to_units(e.mean),
                    self.standardizer.variance_to_units(e.epistemic_var),
                    self.standardizer.variance_to_units(t),
                )
            })
            .collect()
    }

    /// [`DualModel::predict`] with the configured sample count and the
    /// model's prediction substream.
    pub fn predict_default(&self, features: &[FeatureRow]) -> Result<Vec<PredictiveBundle>> {
        let mut rng = Rng::new(self.config.seed).substream(Stream::Prediction, 0);
        self.predict(features, self.config.predict_samples, &mut rng)
    }
}

/// Mean over the batch of `(mean − y)²/var + ln var`.
pub fn heteroscedastic_nll(pred_mean: &[f64], pred_var: &[f64], y: &[f64]) -> Result<f64> {
    if pred_mean.len() != pred_var.len() || pred_mean.len() != y.len() {
        return Err(Error::contract("heteroscedastic_nll: length mismatch"));
    }
    if let Some(v) = pred_var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::contract(format!(
            "heteroscedastic_nll: variance must be positive, got {v}"
        )));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred_mean
        .iter()
        .zip(pred_var)
        .zip(y)
        .map(|((m, v), t)| (m - t) * (m - t) / v + v.ln())
        .sum();
    Ok(total / y.len() as f64)
}

/// [`heteroscedastic_nll`] on the tape, for training a mean/variance head.
pub fn heteroscedastic_nll_on_tape(tape: &mut Tape, mean: Var, var: Var, y: Var) -> Result<Var> {
    if tape.value(var).data().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::contract("heteroscedastic_nll: variance must be positive"));
    }
    let r = tape.sub(mean, y)?;
    let r2 = tape.square(r);
    let ratio = tape.div(r2, var)?;
    let log_var = tape.log(var);
    let per = tape.add(ratio, log_var)?;
    Ok(tape.mean(per))
}

/// Nominal quantile levels at which coverage is measured.
pub fn nominal_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Monotone piecewise-linear map from nominal quantile level to the observed
/// fraction of truths below that predictive quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub nominal: Vec<f64>,
    /// Raw empirical fractions at each nominal level.
    pub observed: Vec<f64>,
    /// Isotonic fit of `observed`.
    pub fitted: Vec<f64>,
}

impl CalibrationMap {
    fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        std::iter::once((0.0, 0.0))
            .chain(self.nominal.iter().copied().zip(self.fitted.iter().copied()))
            .chain(std::iter::once((1.0, 1.0)))
    }

    /// Empirical level for nominal level `p`, interpolating between knots.
    pub fn apply(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let knots: Vec<(f64, f64)> = self.knots().collect();
        for w in knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if p <= x1 {
                if x1 == x0 {
                    return y1;
                }
                return (y0 + (y1 - y0) * (p - x0) / (x1 - x0)).clamp(y0.min(y1), y0.max(y1));
            }
        }
        1.0
    }

    /// Smallest nominal level whose mapped level reaches `target`. Using it as
    /// the quantile level recalibrates the predictive intervals.
    pub fn nominal_for(&self, target: f64) -> f64 {
        let target = target.clamp(0.0, 1.0);
        let knots: Vec<(f64, f64)> = self.knots().collect();
        for w in knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if target <= y1 {
                if y1 == y0 {
                    return x0;
                }
                return (x0 + (x1 - x0) * (target - y0) / (y1 - y0)).clamp(x0, x1);
            }
        }
        1.0
    }

    pub fn is_monotone(&self) -> bool {
        let k: Vec<(f64, f64)> = self.knots().collect();
        k.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 <= w[1].0)
    }

    pub fn max_deviation_from_identity(&self) -> f64 {
        self.nominal
            .iter()
            .zip(&self.fitted)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }
}

pub const MIN_CALIBRATION_POINTS: usize = 50;

/// Fits a [`CalibrationMap`] on held-out predictions, using Gaussian
/// predictive quantiles with mean `ŷ` and variance `σ_tot²`.
pub fn recalibrate(bundles: &[PredictiveBundle], truths: &[f64]) -> Result<CalibrationMap> {
    if bundles.len() != truths.len() {
        return Err(Error::contract("recalibrate: bundles and truths differ in length"));
    }
    if bundles.len() < MIN_CALIBRATION_POINTS {
        return Err(Error::contract(format!(
            "recalibrate needs at least {MIN_CALIBRATION_POINTS} points, got {}",
            bundles.len()
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let nominal = nominal_levels();
    let n = truths.len() as f64;
    let observed: Vec<f64> = nominal
        .iter()
        .map(|&p| {
            let z = normal.inverse_cdf(p);
            let below = bundles
                .iter()
                .zip(truths)
                .filter(|(b, t)| **t <= b.mean + b.total_var.sqrt() * z)
                .count();
            below as f64 / n
        })
        .collect();
    let fitted = isotonic(&observed);
    Ok(CalibrationMap {
        nominal,
        observed,
        fitted,
    })
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (equal weights).
fn isotonic(values: &[f64]) -> Vec<f64> {
    // (block mean, block size)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let n = n1 + n2;
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}
