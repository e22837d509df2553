//! Experiment configuration: model dimensions, training recipe, ablation
//! switches and data options, loaded from nested JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrast::ContrastConfig;
use crate::dataset::{DEFAULT_MAX_EVIDENCE, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::forgery::ForgeryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Toy,
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionerKind {
    #[default]
    SyntheticOracle,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub text_encoder: EncoderKind,
    pub image_encoder: EncoderKind,
    pub captioner: CaptionerKind,
    /// Feature tables for the pretrained tiers (see `FeatureTable`).
    pub text_features: Option<PathBuf>,
    pub image_features: Option<PathBuf>,
    /// Caption table for the pretrained captioner.
    pub captions: Option<PathBuf>,
    /// Toy text width; pretrained widths come from the tables.
    pub text_dim: usize,
    pub image_dim: usize,
    pub vocab_size: usize,
    pub image_channels: [usize; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            text_encoder: EncoderKind::Toy,
            image_encoder: EncoderKind::Toy,
            captioner: CaptionerKind::SyntheticOracle,
            text_features: None,
            image_features: None,
            captions: None,
            text_dim: 64,
            image_dim: 64,
            vocab_size: 4096,
            image_channels: [8, 16, 32],
        }
    }
}

/// The seven component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_evidence_fusion: bool,
    pub no_text_image_contrast: bool,
    pub no_dual_contrast: bool,
    pub no_text_description_contrast: bool,
    pub no_gating: bool,
    pub no_forgery: bool,
    pub no_feature_scaling: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 7] = [
        "no_evidence_fusion",
        "no_text_image_contrast",
        "no_dual_contrast",
        "no_text_description_contrast",
        "no_gating",
        "no_forgery",
        "no_feature_scaling",
    ];

    /// Flags with exactly the named ablation switched on.
    pub fn single(name: &str) -> Result<Self> {
        let mut f = Self::default();
        *f.flag_mut(name)? = true;
        Ok(f)
    }

    fn flag_mut(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "no_evidence_fusion" => &mut self.no_evidence_fusion,
            "no_text_image_contrast" => &mut self.no_text_image_contrast,
            "no_dual_contrast" => &mut self.no_dual_contrast,
            "no_text_description_contrast" => &mut self.no_text_description_contrast,
            "no_gating" => &mut self.no_gating,
            "no_forgery" => &mut self.no_forgery,
            "no_feature_scaling" => &mut self.no_feature_scaling,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation `{other}`; valid flags: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn active(&self) -> Vec<&'static str> {
        let mut copy = *self;
        Self::NAMES
            .into_iter()
            .filter(|n| *copy.flag_mut(n).expect("known name"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.no_dual_contrast && (self.no_text_image_contrast || self.no_text_description_contrast) {
            return Err(Error::Config {
                path: "model.ablation".into(),
                message: "no_dual_contrast already disables both contrastive terms; drop the single-term flags".into(),
            });
        }
        Ok(())
    }

    pub fn evidence_fusion(&self) -> bool {
        !self.no_evidence_fusion
    }

    pub fn forgery(&self) -> bool {
        !self.no_forgery
    }

    pub fn learned_gates(&self) -> bool {
        !self.no_gating
    }

    /// Gating removal also removes the adaptive scale.
    pub fn scaling(&self) -> bool {
        !(self.no_gating || self.no_feature_scaling)
    }

    pub fn text_image_contrast(&self) -> bool {
        !(self.no_dual_contrast || self.no_text_image_contrast)
    }

    pub fn text_caption_contrast(&self) -> bool {
        !(self.no_dual_contrast || self.no_text_description_contrast)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoders: EncoderConfig,
    pub max_tokens: usize,
    pub max_evidence: usize,
    pub evidence_heads: usize,
    pub forgery: ForgeryConfig,
    pub tau: f64,
    pub lambda_tt: f64,
    pub lambda_ti: f64,
    pub contrast_dim: usize,
    pub fusion_dim: usize,
    pub scale_init_theta: f64,
    pub classifier_hidden: usize,
    pub loss_class_weight: f64,
    /// Reject samples without a cached caption instead of masking them.
    pub strict_captions: bool,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let contrast = ContrastConfig::default();
        Self {
            encoders: EncoderConfig::default(),
            max_tokens: 40,
            max_evidence: DEFAULT_MAX_EVIDENCE,
            evidence_heads: 8,
            forgery: ForgeryConfig::default(),
            tau: contrast.tau,
            lambda_tt: contrast.lambda_tt,
            lambda_ti: contrast.lambda_ti,
            contrast_dim: contrast.contrast_dim,
            fusion_dim: 256,
            scale_init_theta: 0.0,
            classifier_hidden: 128,
            loss_class_weight: 1.0,
            strict_captions: true,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Contrastive settings after ablations zero their weights.
    pub fn contrast(&self) -> ContrastConfig {
        ContrastConfig {
            tau: self.tau,
            lambda_tt: if self.ablation.text_caption_contrast() {
                self.lambda_tt
            } else {
                0.0
            },
            lambda_ti: if self.ablation.text_image_contrast() {
                self.lambda_ti
            } else {
                0.0
            },
            contrast_dim: self.contrast_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.max_tokens", self.max_tokens),
            ("model.evidence_heads", self.evidence_heads),
            ("model.contrast_dim", self.contrast_dim),
            ("model.fusion_dim", self.fusion_dim),
            ("model.classifier_hidden", self.classifier_hidden),
            ("model.encoders.text_dim", self.encoders.text_dim),
            ("model.encoders.image_dim", self.encoders.image_dim),
            ("model.encoders.vocab_size", self.encoders.vocab_size),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(config_err(path, "must be positive"));
            }
        }
        if self.encoders.image_channels.contains(&0) {
            return Err(config_err("model.encoders.image_channels", "must be positive"));
        }
        if self.encoders.text_encoder == EncoderKind::Toy && !self.encoders.text_dim.is_multiple_of(self.evidence_heads)
        {
            return Err(config_err(
                "model.evidence_heads",
                format!(
                    "text_dim {} is not divisible by {} heads",
                    self.encoders.text_dim, self.evidence_heads
                ),
            ));
        }
        if self.encoders.image_encoder == EncoderKind::Toy
            && !self.encoders.image_dim.is_multiple_of(self.evidence_heads)
        {
            return Err(config_err(
                "model.evidence_heads",
                format!(
                    "image_dim {} is not divisible by {} heads",
                    self.encoders.image_dim, self.evidence_heads
                ),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err("model.tau", "must be positive"));
        }
        if !(self.lambda_tt >= 0.0) {
            return Err(config_err("model.lambda_tt", "must be non-negative"));
        }
        if !(self.lambda_ti >= 0.0) {
            return Err(config_err("model.lambda_ti", "must be non-negative"));
        }
        if !(self.loss_class_weight >= 0.0) {
            return Err(config_err("model.loss_class_weight", "must be non-negative"));
        }
        if !self.scale_init_theta.is_finite() {
            return Err(config_err("model.scale_init_theta", "must be finite"));
        }
        self.ablation.validate()?;
        if self.ablation.forgery() {
            self.forgery.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    /// Parameters of the epoch with the best validation accuracy.
    #[default]
    BestValidation,
    /// Parameters after the final epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_gamma: f64,
    pub early_stop_patience: usize,
    pub checkpoint_selection: CheckpointSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 8,
            lr_decay_gamma: 0.9,
            early_stop_patience: 2,
            checkpoint_selection: CheckpointSelection::BestValidation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("train.lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("train.weight_decay", "must be non-negative"));
        }
        for (path, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(path, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err("train.adam_eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(config_err("train.epochs", "must be at least 1"));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(config_err("train.lr_decay_gamma", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_gamma.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL dataset; the CLI generates synthetic data when absent.
    pub dataset: Option<PathBuf>,
    pub split_ratios: [f64; 3],
    /// Evidence items kept when loading; the model may use fewer.
    pub load_max_evidence: usize,
    /// Size of the generated synthetic set when no dataset is given.
    pub synthetic_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            split_ratios: DEFAULT_RATIOS,
            load_max_evidence: 9,
            synthetic_samples: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small dimensions and a faster recipe for single-core desk runs with
    /// toy encoders.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model.forgery = ForgeryConfig {
            feature_dim: 32,
            backbone_channels: 8,
            backbone_blocks: 3,
            branch_channels: 4,
            heads: 4,
        };
        c.model.encoders.vocab_size = 1024;
        c.model.contrast_dim = 32;
        c.model.fusion_dim = 64;
        c.model.classifier_hidden = 32;
        c.train.lr = 2e-3;
        c.train.batch_size = 16;
        c.train.epochs = 200;
        c.train.lr_decay_gamma = 0.99;
        c.train.early_stop_patience = 80;
        c.data.synthetic_samples = 150;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let r = self.data.split_ratios;
        if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err("data.split_ratios", "must be non-negative and sum to 1"));
        }
        if self.data.load_max_evidence < self.model.max_evidence {
            return Err(config_err(
                "data.load_max_evidence",
                "must be at least model.max_evidence",
            ));
        }
        Ok(())
    }

    /// Parses and validates; errors carry the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_recipe() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train.lr, 5e-5);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.epochs, 8);
        assert_eq!(c.train.early_stop_patience, 2);
        assert_eq!(c.model.max_tokens, 40);
        assert_eq!(c.model.max_evidence, 5);
        assert_eq!(c.model.evidence_heads, 8);
        assert!((c.train.lr_at(1) - 4.5e-5).abs() < 1e-18);
        c.validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ExperimentConfig::desk();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.train.lr, 5e-5);
    }

    #[test]
    fn errors_name_the_key_path() {
        let err = ExperimentConfig::from_json(r#"{"train": {"lr": "fast"}}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path == "train.lr"),
            "{err}"
        );
        let err = ExperimentConfig::from_json(r#"{"model": {"forgery": {"headz": 2}}}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path.starts_with("model.forgery")),
            "{err}"
        );
        let err = ExperimentConfig::from_json(r#"{"train": {"lr": -1.0}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "train.lr"));
        let err = ExperimentConfig::from_json(r#"{"model": {"evidence_heads": 7}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "model.evidence_heads"));
    }

    #[test]
    fn ablation_flags() {
        assert_eq!(AblationFlags::single("no_gating").unwrap().active(), ["no_gating"]);
        let err = AblationFlags::single("no_magic").unwrap_err().to_string();
        assert!(AblationFlags::NAMES.iter().all(|n| err.contains(n)));
        let redundant = AblationFlags {
            no_dual_contrast: true,
            no_text_image_contrast: true,
            ..Default::default()
        };
        assert!(redundant.validate().is_err());
        let g = AblationFlags::single("no_gating").unwrap();
        assert!(!g.scaling() && !g.learned_gates());
        let mut m = ModelConfig {
            ablation: AblationFlags::single("no_dual_contrast").unwrap(),
            ..Default::default()
        };
        assert_eq!((m.contrast().lambda_tt, m.contrast().lambda_ti), (0.0, 0.0));
        m.ablation = AblationFlags::single("no_text_description_contrast").unwrap();
        assert_eq!((m.contrast().lambda_tt, m.contrast().lambda_ti), (0.0, 0.5));
    }
}
