//! A known variance field for the variance net: y = 0 everywhere and a stub
//! mean predictor whose outputs are N(0, 1 + x1²) draws.

use dualnet_core::normalize::Standardizer;
use dualnet_core::rng::Stream;
use dualnet_core::training::Splits;
use dualnet_core::variance_net::{predict_total_variance, train_variance_net, MeanPredictor, VarianceModel};
use dualnet_core::{Dataset, Rng, Split, Tensor, TrainConfig};

pub struct NoisyStub;

impl MeanPredictor for NoisyStub {
    fn predict_mean(&self, x: &Tensor, _samples: usize, rng: &mut Rng) -> dualnet_core::Result<Vec<f64>> {
        Ok((0..x.rows())
            .map(|i| {
                let x1 = x.data()[i * x.cols()];
                (1.0 + x1 * x1).sqrt() * rng.standard_normal()
            })
            .collect())
    }
}

pub struct ExactStub;

impl MeanPredictor for ExactStub {
    fn predict_mean(&self, x: &Tensor, _samples: usize, _rng: &mut Rng) -> dualnet_core::Result<Vec<f64>> {
        Ok(vec![0.0; x.rows()])
    }
}

pub fn field_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed).substream(Stream::Test, 0);
    let features = (0..n)
        .map(|_| {
            let mut row = [0.0; 6];
            row[0] = rng.uniform_range(-2.0, 2.0);
            for v in &mut row[1..] {
                *v = rng.standard_normal();
            }
            row
        })
        .collect();
    Dataset::new(features, vec![0.0; n], vec![0.0; n], Split::Train).unwrap()
}

pub fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        eval_interval: epochs,
        ..TrainConfig::default()
    }
}

/// Mean predicted and true variance in each decile of x1, after training on
/// 1000 points for 400 epochs and predicting on 5000 fresh ones.
pub fn decile_fit() -> Vec<(f64, f64)> {
    let train = field_dataset(1000, 1);
    let cfg = config(400);
    let root = Rng::new(cfg.seed);
    let st = Standardizer::identity();
    let mut model = VarianceModel::from_config(&cfg, &root);
    train_variance_net(&mut model, &NoisyStub, &st, &Splits::train_only(&train), &cfg, &root).unwrap();

    let eval = field_dataset(5000, 2);
    let x = st.features(&eval.features);
    let y_hat = NoisyStub
        .predict_mean(&x, 1, &mut Rng::new(3).substream(Stream::Test, 1))
        .unwrap();
    let pred = predict_total_variance(&model, &x, &y_hat).unwrap();

    let mut order: Vec<usize> = (0..eval.len()).collect();
    order.sort_by(|&a, &b| eval.features[a][0].total_cmp(&eval.features[b][0]));
    order
        .chunks(eval.len() / 10)
        .map(|chunk| {
            let n = chunk.len() as f64;
            let truth = chunk.iter().map(|&i| 1.0 + eval.features[i][0].powi(2)).sum::<f64>() / n;
            let est = chunk.iter().map(|&i| pred[i]).sum::<f64>() / n;
            (est, truth)
        })
        .collect()
}
