//! The pipeline stages behind each CLI subcommand. Every stage reads and
//! writes files under one output directory:
//!
//! ```text
//! <out>/data/{train,test_id,test_ood}.csv, manifest.json
//! <out>/model/checkpoint.json, learning_curve.csv
//! <out>/eval/report.json, predictions.csv
//! <out>/hetero/separation.json
//! <out>/plots/*.svg
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use dualnet_core::checkpoint::Checkpoint;
use dualnet_core::training::{LearningCurve, Splits};
use dualnet_core::{joint_train, Dataset, JointOptions, NoiseModel, Split};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::plot;
use crate::report::{
    group_threshold, load_predictions, write_predictions, ExperimentReport, GroupSeparation,
    PredictionRow,
};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, split: Split) -> PathBuf {
        self.root.join("data").join(format!("{split}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.json")
    }

    pub fn learning_curve(&self) -> PathBuf {
        self.root.join("model/learning_curve.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("eval/report.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("eval/predictions.csv")
    }

    pub fn separation(&self) -> PathBuf {
        self.root.join("hetero/separation.json")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub path: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub data_seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn generate(cfg: &ExperimentConfig, out: &Layout) -> Result<Manifest> {
    cfg.validate()?;
    let mut files = Vec::new();
    for split in Split::ALL {
        let data = cfg.data.generate(split)?;
        let path = out.data(split);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        data.save_csv(&path)?;
        files.push(ManifestEntry {
            split,
            path: format!("{split}.csv"),
            rows: data.len(),
        });
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        data_seed: cfg.data.features.seed,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Parse(e.to_string()))?;
    write_file(&out.manifest(), json + "\n")?;
    Ok(manifest)
}

fn load_splits(out: &Layout) -> Result<[Dataset; 3]> {
    let load = |s| Dataset::load_csv(out.data(s)).map_err(HarnessError::from);
    Ok([load(Split::Train)?, load(Split::TestId)?, load(Split::TestOod)?])
}

fn curve_csv(bnn: &LearningCurve, vnet: &LearningCurve) -> String {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from(
        "epoch,bnn_rmse_train,bnn_rmse_id,bnn_rmse_ood,vnet_rmse_train,vnet_rmse_id,vnet_rmse_ood\n",
    );
    for (i, b) in bnn.points.iter().enumerate() {
        let v = vnet.points.get(i);
        let row = [
            b.epoch.to_string(),
            cell(Some(b.train)),
            cell(b.test_id),
            cell(b.test_ood),
            cell(v.map(|v| v.train)),
            cell(v.and_then(|v| v.test_id)),
            cell(v.and_then(|v| v.test_ood)),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn train(cfg: &ExperimentConfig, out: &Layout) -> Result<Checkpoint> {
    cfg.validate()?;
    let [train, id, ood] = load_splits(out)?;
    let splits = Splits {
        train: &train,
        test_id: Some(&id),
        test_ood: Some(&ood),
    };
    let model = joint_train(&splits, &cfg.train_config(), JointOptions::default())?;
    let ckpt = Checkpoint::new(&model, cfg.hash());
    write_file(&out.checkpoint(), ckpt.to_json()?)?;
    write_file(
        &out.learning_curve(),
        curve_csv(&model.history.bnn, &model.history.vnet),
    )?;
    Ok(ckpt)
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Layout) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(out.checkpoint())?;
    let expected = cfg.hash();
    if ckpt.config_hash != expected {
        return Err(HarnessError::Incompatible(format!(
            "checkpoint {} was trained under config {}, current config is {}",
            out.checkpoint().display(),
            ckpt.config_hash,
            expected
        )));
    }
    let model = ckpt.into_model()?;
    let mut rows = Vec::new();
    for data in load_splits(out)? {
        let bundles = model.predict_default(&data.features)?;
        rows.extend(
            data.features
                .iter()
                .zip(&data.targets)
                .zip(&bundles)
                .map(|((x, y), b)| PredictionRow::new(*x, *y, b, data.split)),
        );
    }
    let mut csv = Vec::new();
    write_predictions(&rows, &mut csv)?;
    write_file(&out.predictions(), csv)?;
    let report = ExperimentReport::build(
        &expected,
        cfg.training.seed,
        model.history,
        &rows,
        group_threshold(&cfg.data.noise),
    );
    write_file(&out.report(), report.to_json()? + "\n")?;
    Ok(report)
}

/// Generates step-noise data, trains, evaluates and writes the group
/// separation statistics on the ID test split.
pub fn hetero(cfg: &ExperimentConfig, out: &Layout) -> Result<GroupSeparation> {
    if !matches!(cfg.data.noise, NoiseModel::StepOnX1 { .. }) {
        return Err(HarnessError::Config(
            "hetero needs data.noise.kind = \"step_on_x1\"".into(),
        ));
    }
    generate(cfg, out)?;
    train(cfg, out)?;
    let report = evaluate(cfg, out)?;
    let sep = report.heteroscedastic;
    let json = serde_json::to_string_pretty(&sep).map_err(|e| HarnessError::Parse(e.to_string()))?;
    write_file(&out.separation(), json + "\n")?;
    Ok(sep)
}

/// Renders every figure from the report, prediction CSV and training data.
/// Returns the written paths.
pub fn plot(cfg: &ExperimentConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let report = ExperimentReport::load(out.report())?;
    let rows = load_predictions(out.predictions())?;
    let train = Dataset::load_csv(out.data(Split::Train))?;
    let dir = out.plots();
    let mut figures = vec![(
        "learning_curves.svg".to_string(),
        plot::learning_curves(&report.learning_curves),
    )];
    for split in Split::ALL {
        let part: Vec<PredictionRow> = rows.iter().filter(|r| r.split == split).cloned().collect();
        figures.push((
            format!("scatter_{split}.svg"),
            plot::uncertainty_scatter(&part, &format!("predicted std vs |error| ({split})")),
        ));
    }
    let sep = &report.heteroscedastic;
    let (low, high): (Vec<PredictionRow>, Vec<PredictionRow>) = rows
        .iter()
        .filter(|r| r.split == sep.split)
        .cloned()
        .partition(|r| r.x[0] < sep.threshold);
    figures.push((
        "hist_low_noise.svg".into(),
        plot::uncertainty_histograms(&low, &format!("x1 < {} ({})", sep.threshold, sep.split), 30),
    ));
    figures.push((
        "hist_high_noise.svg".into(),
        plot::uncertainty_histograms(&high, &format!("x1 >= {} ({})", sep.threshold, sep.split), 30),
    ));
    figures.push((
        "pair_plot.svg".into(),
        plot::pair_plot(&train.features, cfg.output.pair_plot_points),
    ));
    let mut written = Vec::new();
    for (name, svg) in figures {
        let path = dir.join(name);
        write_file(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

pub fn run_all(cfg: &ExperimentConfig, out: &Layout) -> Result<ExperimentReport> {
    generate(cfg, out)?;
    train(cfg, out)?;
    let report = evaluate(cfg, out)?;
    if cfg.output.plots {
        plot(cfg, out)?;
    }
    Ok(report)
}
