//! Synthetic six-feature regression benchmark.
//!
//! Features are independent Gaussians; the target is a fixed nonlinear
//! function of them plus an optional noise term whose scale may depend on
//! the sample. Out-of-distribution test sets shift every feature mean by a
//! multiple of its std.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const FEATURES: usize = 6;

pub type FeatureRow = [f64; FEATURES];

/// Default cap on the argument of the `exp(-x2·x5²)` term.
pub const DEFAULT_EXP_ARG_CAP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub means: FeatureRow,
    pub stds: FeatureRow,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            means: [0.0, 3.0, 0.0, 5.0, 0.0, 0.0],
            stds: [4.0, 2.0, 2.0, 2.0, 2.0, 2.0],
            sample_count: 1000,
            seed: 0,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some((j, s)) = self
            .stds
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::contract(format!(
                "feature std x{} must be positive, got {s}",
                j + 1
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::contract("feature means must be finite"));
        }
        if self.sample_count == 0 {
            return Err(Error::contract("sample_count must be positive"));
        }
        Ok(())
    }
}

/// Per-sample observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// σᵢ ~ Uniform[lo, hi], then εᵢ ~ N(0, σᵢ²).
    UniformScale { lo: f64, hi: f64 },
    /// σᵢ = low_sigma when x1 < threshold, else high_sigma.
    StepOnX1 {
        low_sigma: f64,
        high_sigma: f64,
        threshold: f64,
    },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::UniformScale { lo: 0.0, hi: 2.0 }
    }
}

impl NoiseModel {
    pub fn step_default() -> Self {
        NoiseModel::StepOnX1 {
            low_sigma: 1.0,
            high_sigma: 5.0,
            threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::UniformScale { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
                    Ok(())
                } else {
                    Err(Error::contract(format!(
                        "uniform noise scale range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
                    )))
                }
            }
            NoiseModel::StepOnX1 {
                low_sigma,
                high_sigma,
                threshold,
            } => {
                if low_sigma >= 0.0 && high_sigma >= 0.0 && threshold.is_finite() {
                    Ok(())
                } else {
                    Err(Error::contract("step noise sigmas must be non-negative"))
                }
            }
        }
    }
}

/// The benchmark target `y = sin x1 + x2² − 2·x1·x3² + √x4 + exp(−x2·x5²) − 3·x6/(0.2+|x1|)`.
///
/// `√x4` is evaluated as `√max(x4, 0)` and the exponent is capped at
/// `exp_arg_cap`, so the function is finite for every finite input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub exp_arg_cap: f64,
}

impl Default for TargetFunction {
    fn default() -> Self {
        Self {
            exp_arg_cap: DEFAULT_EXP_ARG_CAP,
        }
    }
}

impl TargetFunction {
    pub fn eval(&self, x: &FeatureRow) -> f64 {
        let [x1, x2, x3, x4, x5, x6] = *x;
        let exp_arg = (-x2 * x5 * x5).min(self.exp_arg_cap);
        x1.sin() + x2 * x2 - 2.0 * x1 * x3 * x3 + x4.max(0.0).sqrt() + exp_arg.exp()
            - 3.0 * x6 / (0.2 + x1.abs())
    }
}

/// [`TargetFunction::eval`] with the default exponent cap.
pub fn target_function(x: &FeatureRow) -> f64 {
    TargetFunction::default().eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestId,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestId, Split::TestOod];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestId => "test_id",
            Split::TestOod => "test_ood",
        }
    }

    fn stream_index(self) -> u32 {
        self as u32
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test_id" => Ok(Split::TestId),
            "test_ood" => Ok(Split::TestOod),
            other => Err(format!("unknown split label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<FeatureRow>,
    pub targets: Vec<f64>,
    /// True per-sample noise std used when generating the target.
    pub noise_sigma: Vec<f64>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<FeatureRow>,
        targets: Vec<f64>,
        noise_sigma: Vec<f64>,
        split: Split,
    ) -> Result<Self> {
        if features.len() != targets.len() || features.len() != noise_sigma.len() {
            return Err(Error::contract(format!(
                "dataset columns differ in length: {} features, {} targets, {} sigmas",
                features.len(),
                targets.len(),
                noise_sigma.len()
            )));
        }
        if noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::contract("noise sigma must be non-negative"));
        }
        Ok(Self {
            features,
            targets,
            noise_sigma,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Features as an `n×6` tensor.
    pub fn feature_tensor(&self) -> Tensor {
        let data = self.features.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::matrix(self.len(), FEATURES, data).expect("rows have six features")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(HEADER).map_err(|e| csv_io(path, e))?;
        let mut record = Vec::with_capacity(HEADER.len());
        for i in 0..self.len() {
            record.clear();
            record.extend(self.features[i].iter().map(|v| v.to_string()));
            record.push(self.targets[i].to_string());
            record.push(self.noise_sigma[i].to_string());
            record.push(self.split.as_str().to_string());
            w.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a dataset written by [`Dataset::save_csv`]. All rows must carry
    /// the same split label; a header-only file yields an empty train split.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = r.records();
        let header = match records.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some(h) => h.map_err(csv_parse)?,
        };
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header {:?}, found {} columns {:?}",
                    HEADER.join(","),
                    header.len(),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }

        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut sigmas = Vec::new();
        let mut split = None;
        for rec in records {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != HEADER.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} columns, found {}", HEADER.len(), rec.len()),
                });
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column {}: {e}", HEADER[i]),
                })
            };
            let mut row = [0.0; FEATURES];
            for (j, v) in row.iter_mut().enumerate() {
                *v = num(j)?;
            }
            let label: Split = rec[8].trim().parse().map_err(|message| Error::Parse {
                line,
                message,
            })?;
            match split {
                None => split = Some(label),
                Some(s) if s != label => {
                    return Err(Error::Parse {
                        line,
                        message: format!("mixed split labels {s} and {label}"),
                    })
                }
                _ => {}
            }
            let sigma = num(7)?;
            if !(sigma >= 0.0) {
                return Err(Error::Parse {
                    line,
                    message: format!("sigma_true must be non-negative, got {sigma}"),
                });
            }
            features.push(row);
            targets.push(num(6)?);
            sigmas.push(sigma);
        }
        Dataset::new(features, targets, sigmas, split.unwrap_or(Split::Train))
    }
}

const HEADER: [&str; 9] = ["x1", "x2", "x3", "x4", "x5", "x6", "y", "sigma_true", "split"];

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Draws `spec.sample_count` rows with column j ~ N(means[j], stds[j]²).
pub fn sample_features(spec: &FeatureSpec, rng: &mut Rng) -> Result<Vec<FeatureRow>> {
    spec.validate()?;
    let rows = (0..spec.sample_count)
        .map(|_| {
            let mut row = [0.0; FEATURES];
            for (j, v) in row.iter_mut().enumerate() {
                *v = spec.means[j] + spec.stds[j] * rng.standard_normal();
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Adds noise to `y`; returns the noisy targets and the σ used for each sample.
pub fn apply_noise(
    y: &[f64],
    x: &[FeatureRow],
    model: &NoiseModel,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if y.len() != x.len() {
        return Err(Error::contract(format!(
            "apply_noise: {} targets for {} feature rows",
            y.len(),
            x.len()
        )));
    }
    model.validate()?;
    let mut noisy = Vec::with_capacity(y.len());
    let mut sigmas = Vec::with_capacity(y.len());
    for (yi, xi) in y.iter().zip(x) {
        let sigma = match *model {
            NoiseModel::None => {
                noisy.push(*yi);
                sigmas.push(0.0);
                continue;
            }
            NoiseModel::UniformScale { lo, hi } => rng.uniform_range(lo, hi),
            NoiseModel::StepOnX1 {
                low_sigma,
                high_sigma,
                threshold,
            } => {
                if xi[0] < threshold {
                    low_sigma
                } else {
                    high_sigma
                }
            }
        };
        noisy.push(yi + sigma * rng.standard_normal());
        sigmas.push(sigma);
    }
    Ok((noisy, sigmas))
}

/// Shifts every mean by `shift` stds; stds and sample count are unchanged.
pub fn make_ood(spec: &FeatureSpec, shift: f64) -> FeatureSpec {
    let mut out = spec.clone();
    for (m, s) in out.means.iter_mut().zip(&spec.stds) {
        *m += shift * s;
    }
    out
}

/// Everything needed to regenerate the three benchmark splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub features: FeatureSpec,
    pub noise: NoiseModel,
    pub target: TargetFunction,
    /// OOD mean shift in units of each feature's std.
    pub ood_shift: f64,
    pub test_id_count: usize,
    pub test_ood_count: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            features: FeatureSpec::default(),
            noise: NoiseModel::default(),
            target: TargetFunction::default(),
            ood_shift: 2.5,
            test_id_count: 1000,
            test_ood_count: 1000,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.noise.validate()?;
        if !self.ood_shift.is_finite() {
            return Err(Error::contract("ood_shift must be finite"));
        }
        if !(self.target.exp_arg_cap <= 700.0) {
            return Err(Error::contract(
                "exp_arg_cap must be <= 700 to keep targets finite",
            ));
        }
        Ok(())
    }

    pub fn split_spec(&self, split: Split) -> FeatureSpec {
        match split {
            Split::Train => self.features.clone(),
            Split::TestId => FeatureSpec {
                sample_count: self.test_id_count,
                ..self.features.clone()
            },
            Split::TestOod => FeatureSpec {
                sample_count: self.test_ood_count,
                ..make_ood(&self.features, self.ood_shift)
            },
        }
    }

    /// Generates one split. Each split reads its own RNG substreams, so
    /// splits are independent of each other and of generation order.
    pub fn generate(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let spec = self.split_spec(split);
        let root = Rng::new(self.features.seed);
        let features = if spec.sample_count == 0 {
            Vec::new()
        } else {
            sample_features(
                &spec,
                &mut root.substream(Stream::Features, split.stream_index()),
            )?
        };
        let clean: Vec<f64> = features.iter().map(|x| self.target.eval(x)).collect();
        let (targets, sigmas) = apply_noise(
            &clean,
            &features,
            &self.noise,
            &mut root.substream(Stream::Noise, split.stream_index()),
        )?;
        Dataset::new(features, targets, sigmas, split)
    }
}
