//! Config resolution, data loading and the train/evaluate pipeline shared
//! by the commands.

use std::fs;
use std::path::Path;

use mmrd_core::config::{CaptionerKind, EncoderKind, ExperimentConfig};
use mmrd_core::dataset::{
    generate_synthetic_with, load_dataset, split_dataset, DatasetSplit, Label, Sample, SignalSpec, SyntheticOptions,
};
use mmrd_core::model::{BatchOutput, Model, Resources};
use mmrd_core::train::{evaluate, train, Checkpoint, EpochLog, MetricsReport};
use mmrd_core::Exec;
use ndarray::Array2;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::{EncoderTier, GlobalArgs, Preset};
use crate::error::{CliError, CliResult};
use crate::run_dir::RunDir;

/// Preset values, then the config file, then command-line overrides.
pub fn resolve_config(g: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let base = match g.preset {
        Preset::Full => ExperimentConfig::default(),
        Preset::Desk => ExperimentConfig::desk(),
    };
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            layer_config(&base, &text)?
        }
        None => base,
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(tier) = g.encoders {
        let enc = &mut cfg.model.encoders;
        let (kind, captioner) = match tier {
            EncoderTier::Toy => (EncoderKind::Toy, CaptionerKind::SyntheticOracle),
            EncoderTier::Pretrained => (EncoderKind::Pretrained, CaptionerKind::Pretrained),
        };
        enc.text_encoder = kind;
        enc.image_encoder = kind;
        enc.captioner = captioner;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overlays a JSON document on `base`; unknown keys and bad values are
/// reported with their key path.
pub fn layer_config(base: &ExperimentConfig, text: &str) -> CliResult<ExperimentConfig> {
    let overlay: Value = serde_json::from_str(text).map_err(|e| mmrd_core::Error::Config {
        path: ".".into(),
        message: e.to_string(),
    })?;
    let mut merged = serde_json::to_value(base).expect("config serializes");
    merge(&mut merged, overlay);
    Ok(ExperimentConfig::from_json(&merged.to_string())?)
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Debug, Clone)]
pub struct LoadedSamples {
    pub samples: Vec<Sample>,
    pub skipped_samples: usize,
    pub skipped_evidence_images: usize,
}

pub fn load_samples(path: &Path, cfg: &ExperimentConfig) -> CliResult<LoadedSamples> {
    let loaded = load_dataset(path, cfg.data.load_max_evidence, Exec::default())?;
    if loaded.samples.is_empty() {
        return Err(CliError::Runtime(format!("no readable samples in {}", path.display())));
    }
    Ok(LoadedSamples {
        samples: loaded.samples,
        skipped_samples: loaded.skipped_samples,
        skipped_evidence_images: loaded.skipped_evidence_images,
    })
}

/// The configured dataset, or a synthetic set when none is configured.
pub fn primary_samples(path: Option<&Path>, cfg: &ExperimentConfig) -> CliResult<LoadedSamples> {
    match path.or(cfg.data.dataset.as_deref()) {
        Some(p) => load_samples(p, cfg),
        None => Ok(LoadedSamples {
            samples: generate_synthetic_with(
                &SyntheticOptions {
                    evidence_items: cfg.data.load_max_evidence,
                    ..SyntheticOptions::new(cfg.data.synthetic_samples, cfg.seed, SignalSpec::default())
                },
                Exec::default(),
            )?,
            skipped_samples: 0,
            skipped_evidence_images: 0,
        }),
    }
}

/// Content hash over ids, texts, captions, evidence, labels and pixels.
pub fn dataset_hash<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    for s in samples {
        field(s.id.as_bytes());
        field(s.text.as_bytes());
        field(s.caption.as_deref().unwrap_or("\u{0}none").as_bytes());
        field(&[s.label.index() as u8]);
        field(s.image.as_bytes());
        field(&(s.text_evidence.len() as u64).to_le_bytes());
        for t in &s.text_evidence {
            field(t.as_bytes());
        }
        field(&(s.image_evidence.len() as u64).to_le_bytes());
        for img in &s.image_evidence {
            field(img.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits `main` by the configured ratios; explicit validation or test
/// sets replace the corresponding share.
pub fn make_split(
    main: Vec<Sample>,
    val: Option<Vec<Sample>>,
    test: Option<Vec<Sample>>,
    cfg: &ExperimentConfig,
) -> CliResult<DatasetSplit> {
    let [r_train, r_val, r_test] = cfg.data.split_ratios;
    let share = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 1.0 };
    let split = match (val, test) {
        (None, None) => split_dataset(main, cfg.data.split_ratios, cfg.seed)?,
        (Some(val), Some(test)) => DatasetSplit {
            train: main,
            val,
            test,
            seed: cfg.seed,
            ratios: [1.0, 0.0, 0.0],
        },
        (None, Some(test)) => {
            let a = share(r_train, r_val);
            let mut s = split_dataset(main, [a, 1.0 - a, 0.0], cfg.seed)?;
            s.val.append(&mut s.test);
            s.test = test;
            s
        }
        (Some(val), None) => {
            let a = share(r_train, r_test);
            let mut s = split_dataset(main, [a, 0.0, 1.0 - a], cfg.seed)?;
            s.val = val;
            s
        }
    };
    for (name, part) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if part.is_empty() {
            return Err(CliError::Usage(format!(
                "the {name} split is empty; adjust data.split_ratios or pass --val/--test"
            )));
        }
    }
    Ok(split)
}

/// Everything a finished training run produced.
#[derive(Debug)]
pub struct ExperimentResult {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Test-split metrics with the training loss history attached.
    pub test_report: MetricsReport,
    pub test_output: BatchOutput,
    pub test_rows: Vec<(String, Label)>,
    pub trainable_params: usize,
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    resources: &Resources,
    exec: Exec,
    on_epoch: impl FnMut(&EpochLog),
) -> CliResult<ExperimentResult> {
    let (model, store) = Model::build(&cfg.model, resources, cfg.seed)?;
    let trainable_params = store.num_trainable_scalars();
    let train_set = model.prepare_all(&split.train, exec)?;
    let val_set = model.prepare_all(&split.val, exec)?;
    let test_set = model.prepare_all(&split.test, exec)?;
    let outcome = train(
        &model, store, &train_set, &val_set, &cfg.train, cfg.seed, exec, on_epoch,
    )?;
    let (mut test_report, test_output) = evaluate(&model, &outcome.store, &test_set, cfg.train.batch_size, exec)?;
    test_report.loss_history = outcome.history.clone();
    let checkpoint = Checkpoint {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        seed: cfg.seed,
        epoch: outcome.epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        metrics: Some(test_report.clone()),
        params: outcome.store,
    };
    Ok(ExperimentResult {
        model,
        checkpoint,
        history: outcome.history,
        stopped_early: outcome.stopped_early,
        test_report,
        test_output,
        test_rows: split.test.iter().map(|s| (s.id.clone(), s.label)).collect(),
        trainable_params,
    })
}

/// Writes config, checkpoint, metrics, confusion matrix, test features and
/// the loss curve.
pub fn write_training_artifacts(run: &mut RunDir, cfg: &ExperimentConfig, r: &ExperimentResult) -> CliResult<()> {
    run.write("config.json", cfg.to_json().as_bytes())?;
    run.write("checkpoint.bin", &r.checkpoint.to_bytes())?;
    run.write("metrics.json", metrics_json(&r.test_report).as_bytes())?;
    run.write("confusion.csv", r.test_report.confusion_csv().as_bytes())?;
    run.write(
        "features.csv",
        features_csv(&r.test_rows, &r.test_output.features).as_bytes(),
    )?;
    run.write("loss_curve.csv", r.test_report.loss_curve_csv().as_bytes())?;
    run.note("checkpoint_epoch", r.checkpoint.epoch);
    run.note("best_val_accuracy", r.checkpoint.best_val_accuracy);
    run.note("epochs_run", r.history.len());
    run.note("stopped_early", r.stopped_early);
    run.note("trainable_params", r.trainable_params);
    Ok(())
}

pub fn metrics_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("metrics serialize")
}

/// `id,label,f0,…` with one row per sample; floats use the shortest
/// representation that parses back to the same value.
pub fn features_csv(rows: &[(String, Label)], features: &Array2<f64>) -> String {
    let mut out = String::from("id,label");
    for j in 0..features.ncols() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for ((id, label), row) in rows.iter().zip(features.rows()) {
        out.push_str(&csv_field(id));
        out.push_str(&format!(",{}", label.index()));
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Stable default run id: command, seed and a digest of config and data.
pub fn default_run_id(command: &str, cfg: &ExperimentConfig, data_hash: &str) -> String {
    let digest = crate::run_dir::sha256_hex(format!("{}\n{data_hash}", cfg.to_json()).as_bytes());
    format!("{command}-s{}-{}", cfg.seed, &digest[..10])
}
