#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmrd_core::config::{ExperimentConfig, ModelConfig};
use mmrd_core::forgery::ForgeryConfig;

/// Every dimension at most 16 so whole runs take seconds.
pub fn tiny_model() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoders.text_dim = 8;
    c.encoders.image_dim = 8;
    c.encoders.vocab_size = 64;
    c.encoders.image_channels = [2, 4, 4];
    c.evidence_heads = 2;
    c.max_evidence = 3;
    c.forgery = ForgeryConfig {
        feature_dim: 8,
        backbone_channels: 4,
        backbone_blocks: 3,
        branch_channels: 2,
        heads: 2,
    };
    c.contrast_dim = 4;
    c.tau = 0.5;
    c.fusion_dim = 8;
    c.classifier_hidden = 8;
    c
}

pub fn tiny_experiment(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        model: tiny_model(),
        ..ExperimentConfig::default()
    };
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.lr = 1e-3;
    c.data.synthetic_samples = 30;
    c
}

/// Writes the tiny configuration as JSON and returns its path.
pub fn write_config(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join(format!("tiny-{seed}.json"));
    std::fs::write(&path, tiny_experiment(seed).to_json()).unwrap();
    path
}

pub fn mmrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("mmrd binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
