//! Per-sample predictions and the experiment report built from them.
//!
//! Every number in the report is a function of the prediction rows alone
//! (plus the training history), so the report can be recomputed from the
//! prediction CSV.

use std::io::{Read, Write};
use std::path::Path;

use dualnet_core::datagen::FEATURES;
use dualnet_core::dual::{heteroscedastic_nll, recalibrate, CalibrationMap, TrainingHistory};
use dualnet_core::{NoiseModel, PredictiveBundle, Split};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{mean, median, pearson, rmse, spearman};

pub const REPORT_FORMAT: &str = "dualnet-report";
pub const REPORT_VERSION: u32 = 1;

pub const PREDICTION_HEADER: [&str; 13] = [
    "x1", "x2", "x3", "x4", "x5", "x6", "y_true", "y_hat", "sigma1", "sigma2", "sigma_tot", "clamped",
    "split",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub x: [f64; FEATURES],
    pub y_true: f64,
    pub y_hat: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_tot: f64,
    pub clamped: bool,
    pub split: Split,
}

impl PredictionRow {
    pub fn new(x: [f64; FEATURES], y_true: f64, b: &PredictiveBundle, split: Split) -> Self {
        Self {
            x,
            y_true,
            y_hat: b.mean,
            sigma1: b.epistemic_var.sqrt(),
            sigma2: b.aleatoric_var.sqrt(),
            sigma_tot: b.total_var.sqrt(),
            clamped: b.clamped,
            split,
        }
    }

    pub fn abs_error(&self) -> f64 {
        (self.y_hat - self.y_true).abs()
    }
}

pub fn write_predictions(rows: &[PredictionRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let parse = |e: csv::Error| HarnessError::Parse(e.to_string());
    w.write_record(PREDICTION_HEADER).map_err(parse)?;
    for r in rows {
        let mut rec: Vec<String> = r.x.iter().map(f64::to_string).collect();
        for v in [r.y_true, r.y_hat, r.sigma1, r.sigma2, r.sigma_tot] {
            rec.push(v.to_string());
        }
        rec.push(r.clamped.to_string());
        rec.push(r.split.to_string());
        w.write_record(&rec).map_err(parse)?;
    }
    w.flush()
        .map_err(|e| HarnessError::Parse(format!("writing predictions: {e}")))
}

pub fn read_predictions(input: impl Read) -> Result<Vec<PredictionRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let got: Vec<String> = r
        .headers()
        .map_err(|e| HarnessError::Parse(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if got != PREDICTION_HEADER {
        return Err(HarnessError::Parse(format!("unexpected prediction header {got:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::Parse(format!("line {line}: {e}")))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| HarnessError::Parse(format!("line {line}: bad number {:?} in {}", &rec[k], PREDICTION_HEADER[k])))
        };
        let mut x = [0.0; FEATURES];
        for (k, v) in x.iter_mut().enumerate() {
            *v = num(k)?;
        }
        rows.push(PredictionRow {
            x,
            y_true: num(6)?,
            y_hat: num(7)?,
            sigma1: num(8)?,
            sigma2: num(9)?,
            sigma_tot: num(10)?,
            clamped: rec[11]
                .parse()
                .map_err(|_| HarnessError::Parse(format!("line {line}: bad flag {:?}", &rec[11])))?,
            split: rec[12]
                .parse()
                .map_err(|e: String| HarnessError::Parse(format!("line {line}: {e}")))?,
        });
    }
    Ok(rows)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_predictions(std::io::BufReader::new(f))
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))
}

/// Location and correlation with |error| of one uncertainty column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyStats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub pearson_abs_error: Option<f64>,
    pub spearman_abs_error: Option<f64>,
}

impl UncertaintyStats {
    fn of(sigma: &[f64], abs_err: &[f64]) -> Self {
        Self {
            mean: mean(sigma),
            median: median(sigma),
            pearson_abs_error: pearson(sigma, abs_err),
            spearman_abs_error: spearman(sigma, abs_err),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: Split,
    pub rows: usize,
    pub rmse: Option<f64>,
    /// Gaussian NLL with the total variance; `None` if any variance is zero.
    pub nll: Option<f64>,
    pub clamp_rate: Option<f64>,
    pub sigma1: UncertaintyStats,
    pub sigma2: UncertaintyStats,
    pub sigma_tot: UncertaintyStats,
}

impl SplitMetrics {
    pub fn compute(split: Split, rows: &[PredictionRow]) -> Self {
        let rows: Vec<&PredictionRow> = rows.iter().filter(|r| r.split == split).collect();
        let col = |f: fn(&PredictionRow) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
        let y_hat = col(|r| r.y_hat);
        let y_true = col(|r| r.y_true);
        let abs_err = col(PredictionRow::abs_error);
        let var_tot: Vec<f64> = col(|r| r.sigma_tot * r.sigma_tot);
        let nll = if rows.is_empty() {
            None
        } else {
            heteroscedastic_nll(&y_hat, &var_tot, &y_true)
                .ok()
                .filter(|v| v.is_finite())
        };
        let clamped: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.clamped))).collect();
        Self {
            split,
            rows: rows.len(),
            rmse: rmse(&y_hat, &y_true),
            nll,
            clamp_rate: mean(&clamped),
            sigma1: UncertaintyStats::of(&col(|r| r.sigma1), &abs_err),
            sigma2: UncertaintyStats::of(&col(|r| r.sigma2), &abs_err),
            sigma_tot: UncertaintyStats::of(&col(|r| r.sigma_tot), &abs_err),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub rows: usize,
    pub median_sigma1: Option<f64>,
    pub median_sigma2: Option<f64>,
    pub median_sigma_tot: Option<f64>,
    pub median_abs_error: Option<f64>,
}

impl GroupStats {
    fn of(rows: &[&PredictionRow]) -> Self {
        let med = |f: fn(&PredictionRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            rows: rows.len(),
            median_sigma1: med(|r| r.sigma1),
            median_sigma2: med(|r| r.sigma2),
            median_sigma_tot: med(|r| r.sigma_tot),
            median_abs_error: med(PredictionRow::abs_error),
        }
    }
}

/// Uncertainty medians on either side of `x1 = threshold`, and the
/// high-side over low-side ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSeparation {
    pub split: Split,
    pub threshold: f64,
    /// `x1 < threshold`
    pub low: GroupStats,
    /// `x1 >= threshold`
    pub high: GroupStats,
    pub sigma1_ratio: Option<f64>,
    pub sigma2_ratio: Option<f64>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    let r = num? / den?;
    r.is_finite().then_some(r)
}

impl GroupSeparation {
    pub fn compute(split: Split, threshold: f64, rows: &[PredictionRow]) -> Self {
        let (low, high): (Vec<&PredictionRow>, Vec<&PredictionRow>) = rows
            .iter()
            .filter(|r| r.split == split)
            .partition(|r| r.x[0] < threshold);
        let (low, high) = (GroupStats::of(&low), GroupStats::of(&high));
        Self {
            split,
            threshold,
            sigma1_ratio: ratio(high.median_sigma1, low.median_sigma1),
            sigma2_ratio: ratio(high.median_sigma2, low.median_sigma2),
            low,
            high,
        }
    }
}

/// Grouping threshold on x1: the step location for step noise, else 0.
pub fn group_threshold(noise: &NoiseModel) -> f64 {
    match *noise {
        NoiseModel::StepOnX1 { threshold, .. } => threshold,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub split: Split,
    pub map: CalibrationMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub learning_curves: TrainingHistory,
    pub splits: Vec<SplitMetrics>,
    /// Absent when the ID test split is too small or has zero total variance.
    pub calibration: Option<CalibrationTable>,
    pub heteroscedastic: GroupSeparation,
}

impl ExperimentReport {
    pub fn build(
        config_hash: &str,
        seed: u64,
        learning_curves: TrainingHistory,
        rows: &[PredictionRow],
        threshold: f64,
    ) -> Self {
        let splits = Split::ALL
            .iter()
            .map(|&s| SplitMetrics::compute(s, rows))
            .collect();
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config_hash: config_hash.into(),
            seed,
            learning_curves,
            splits,
            calibration: calibration(Split::TestId, rows),
            heteroscedastic: GroupSeparation::compute(Split::TestId, threshold, rows),
        }
    }

    pub fn split(&self, split: Split) -> Option<&SplitMetrics> {
        self.splits.iter().find(|m| m.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| HarnessError::Parse(format!("report: {e}")))?;
        if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
            return Err(HarnessError::Parse(format!(
                "not a {REPORT_FORMAT} v{REPORT_VERSION} file (found {} v{})",
                r.format, r.version
            )));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))
    }
}

fn calibration(split: Split, rows: &[PredictionRow]) -> Option<CalibrationTable> {
    let rows: Vec<&PredictionRow> = rows.iter().filter(|r| r.split == split).collect();
    if rows.iter().any(|r| !(r.sigma_tot > 0.0)) {
        return None;
    }
    let bundles = rows
        .iter()
        .map(|r| PredictiveBundle::from_parts(r.y_hat, r.sigma1 * r.sigma1, r.sigma_tot * r.sigma_tot))
        .collect::<dualnet_core::Result<Vec<_>>>()
        .ok()?;
    let truths: Vec<f64> = rows.iter().map(|r| r.y_true).collect();
    let map = recalibrate(&bundles, &truths).ok()?;
    Some(CalibrationTable { split, map })
}
