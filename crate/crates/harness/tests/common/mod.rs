#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualnet_harness::ExperimentConfig;

/// A config small enough to run the whole pipeline in about a second.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.features.sample_count = 200;
    cfg.data.test_id_count = 100;
    cfg.data.test_ood_count = 100;
    cfg.training.epochs = 40;
    cfg.training.eval_interval = 10;
    cfg.training.predict_samples = 20;
    cfg.output.pair_plot_points = 50;
    cfg
}

pub fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

pub fn dualnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualnet"))
        .args(args)
        .output()
        .expect("run dualnet")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
