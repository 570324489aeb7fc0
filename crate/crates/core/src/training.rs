//! Types shared by the two training loops.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::normalize::{Prepared, Standardizer};

/// Training split plus the optional test splits tracked on learning curves.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub test_id: Option<&'a Dataset>,
    pub test_ood: Option<&'a Dataset>,
}

impl<'a> Splits<'a> {
    pub fn train_only(train: &'a Dataset) -> Self {
        Self {
            train,
            test_id: None,
            test_ood: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedSplits {
    pub train: Prepared,
    /// `[test_id, test_ood]`
    pub tests: [Option<Prepared>; 2],
}

impl PreparedSplits {
    pub fn new(splits: &Splits<'_>, standardizer: &Standardizer) -> Self {
        Self {
            train: Prepared::new(splits.train, standardizer),
            tests: [
                splits.test_id.map(|d| Prepared::new(d, standardizer)),
                splits.test_ood.map(|d| Prepared::new(d, standardizer)),
            ],
        }
    }

    /// `(slot, data)` for train (slot 0) and each present test split.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Prepared)> {
        std::iter::once((0, &self.train)).chain(
            self.tests
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.as_ref().map(|p| (i + 1, p))),
        )
    }
}

/// One learning-curve sample. `epoch` counts completed epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train: f64,
    pub test_id: Option<f64>,
    pub test_ood: Option<f64>,
}

impl CurvePoint {
    pub(crate) fn from_slots(epoch: usize, values: [Option<f64>; 3]) -> Self {
        Self {
            epoch,
            train: values[0].unwrap_or(f64::NAN),
            test_id: values[1],
            test_ood: values[2],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

pub(crate) fn minibatches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size)
}

pub(crate) fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (sse / pred.len() as f64).sqrt()
}
