use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, FEATURES};
use crate::tensor::Tensor;

/// Per-feature and target standardization fitted on the training split.
/// Degenerate (zero-spread) columns use a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: [f64; FEATURES],
    pub feature_std: [f64; FEATURES],
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            feature_mean: [0.0; FEATURES],
            feature_std: [1.0; FEATURES],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn fit(train: &Dataset) -> Self {
        let mut feature_mean = [0.0; FEATURES];
        let mut feature_std = [1.0; FEATURES];
        for j in 0..FEATURES {
            let (m, s) = mean_std(train.features.iter().map(move |r| r[j]));
            feature_mean[j] = m;
            feature_std[j] = s;
        }
        let (target_mean, target_std) = mean_std(train.targets.iter().copied());
        Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        }
    }

    /// Standardized `n×6` feature matrix.
    pub fn features(&self, rows: &[[f64; FEATURES]]) -> Tensor {
        let data = rows
            .iter()
            .flat_map(|r| (0..FEATURES).map(move |j| (r[j] - self.feature_mean[j]) / self.feature_std[j]))
            .collect();
        Tensor::matrix(rows.len(), FEATURES, data).expect("six columns")
    }

    pub fn targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| (v - self.target_mean) / self.target_std)
            .collect()
    }

    pub fn target_to_units(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }

    pub fn variance_to_units(&self, v: f64) -> f64 {
        v * self.target_std * self.target_std
    }
}

/// A split converted to standardized tensors.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl Prepared {
    pub fn new(data: &Dataset, standardizer: &Standardizer) -> Self {
        Self {
            x: standardizer.features(&data.features),
            y: standardizer.targets(&data.targets),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}
