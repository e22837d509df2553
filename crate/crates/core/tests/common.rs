#![allow(dead_code)]

use mmrd_core::config::{AblationFlags, ExperimentConfig, ModelConfig};
use mmrd_core::dataset::{generate_synthetic_dataset, Sample, SignalSpec};
use mmrd_core::forgery::ForgeryConfig;
use mmrd_core::model::{Model, ModelInput, Resources};
use mmrd_core::params::ParamStore;
use mmrd_core::Exec;

/// Every dimension at most 16, for finite-difference checks.
pub fn tiny_config() -> ModelConfig {
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

pub fn with_ablation(mut c: ModelConfig, name: &str) -> ModelConfig {
    c.ablation = AblationFlags::single(name).unwrap();
    c
}

pub fn samples(n: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic_dataset(n, seed, &SignalSpec::default()).unwrap()
}

pub fn build(cfg: &ModelConfig, seed: u64, data: &[Sample]) -> (Model, ParamStore, Vec<ModelInput>) {
    let (model, store) = Model::build(cfg, &Resources::default(), seed).unwrap();
    let inputs = model.prepare_all(data, Exec::default()).unwrap();
    (model, store, inputs)
}

pub fn desk() -> ExperimentConfig {
    ExperimentConfig::desk()
}
