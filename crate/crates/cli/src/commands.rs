//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use mmrd_core::config::{AblationFlags, CaptionerKind, ExperimentConfig};
use mmrd_core::dataset::{generate_synthetic_with, read_records, write_dataset, Record, SignalSpec, SyntheticOptions};
use mmrd_core::encoders::{generate_caption, CaptionGenerator, CaptionRequest, CaptionTable, SyntheticOracleCaptioner};
use mmrd_core::forgery::SpectrumFeature;
use mmrd_core::image::{Image, IMAGE_SIZE};
use mmrd_core::model::Resources;
use mmrd_core::train::{evaluate, Checkpoint, EpochLog, MetricsReport};
use mmrd_core::Exec;

use crate::args::{CaptionerChoice, Cli, Command, DataArgs, SignalChoice};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    dataset_hash, default_run_id, features_csv, load_samples, make_split, metrics_json, primary_samples,
    resolve_config, run_experiment, write_training_artifacts, ExperimentResult,
};
use crate::run_dir::{sha256_hex, RunDir};

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli.global)?;
    let ctx = Context {
        cli,
        out: cli.global.out.clone(),
    };
    match &cli.command {
        Command::Prepare { dataset, captioner } => ctx.prepare(cfg, dataset, *captioner),
        Command::Train(data) => ctx.train(cfg, data),
        Command::Eval { checkpoint, dataset } => ctx.eval(cfg, checkpoint, dataset),
        Command::Ablate { flags, baseline, data } => ctx.ablate(cfg, flags, *baseline, data),
        Command::SweepEvidence { k_min, k_max, data } => ctx.sweep(cfg, *k_min, *k_max, data),
        Command::ExportFeatures { checkpoint, dataset } => ctx.export_features(cfg, checkpoint, dataset),
        Command::Report { metrics } => ctx.report(cfg, metrics),
        Command::SynthData {
            n,
            signals,
            captions,
            name,
        } => ctx.synth_data(cfg, *n, *signals, *captions, name),
        Command::Spectrum { image } => ctx.spectrum(cfg, image),
    }
}

/// Split, dataset hash and skip counts noted in the manifest.
type LoadedSplit = (mmrd_core::dataset::DatasetSplit, String, Vec<(&'static str, usize)>);

struct Context<'a> {
    cli: &'a Cli,
    out: PathBuf,
}

fn print_epoch(log: &EpochLog) {
    eprintln!(
        "epoch {:>3}  lr {:.2e}  loss {:.4}  train acc {:.3}  val acc {:.3}",
        log.epoch, log.lr, log.train_loss, log.train_accuracy, log.val_accuracy
    );
}

impl Context<'_> {
    fn run_dir(&self, cfg: &ExperimentConfig, inputs_hash: &str) -> CliResult<RunDir> {
        let command = self.cli.command.name();
        let id = match &self.cli.global.run_id {
            Some(id) => id.clone(),
            None => default_run_id(command, cfg, inputs_hash),
        };
        RunDir::create(&self.out, &id, command, cfg)
    }

    fn prepare(&self, cfg: ExperimentConfig, dataset: &Path, choice: Option<CaptionerChoice>) -> CliResult<()> {
        let kind = match choice {
            Some(CaptionerChoice::SyntheticOracle) => CaptionerKind::SyntheticOracle,
            Some(CaptionerChoice::Pretrained) => CaptionerKind::Pretrained,
            None => cfg.model.encoders.captioner,
        };
        let generator: Box<dyn CaptionGenerator> = match kind {
            CaptionerKind::SyntheticOracle => Box::new(SyntheticOracleCaptioner),
            CaptionerKind::Pretrained => {
                let path = cfg.model.encoders.captions.as_ref().ok_or_else(|| {
                    mmrd_core::Error::MissingResource(
                        "pretrained captioner needs a caption table (model.encoders.captions)".into(),
                    )
                })?;
                Box::new(CaptionTable::open(path)?)
            }
        };
        let input = fs::read(dataset).map_err(|e| CliError::io(dataset, e))?;
        let outcome = caption_dataset(dataset, generator.as_ref())?;
        let target = captioned_path(dataset);
        fs::write(&target, &outcome.text).map_err(|e| CliError::io(&target, e))?;

        let mut run = self.run_dir(&cfg, &sha256_hex(&input))?;
        run.set_dataset_hash(sha256_hex(&input));
        run.record_external(&target)?;
        run.note("captioned", outcome.captioned);
        run.note("kept", outcome.kept);
        run.note("warnings", outcome.warnings);
        run.finish()?;
        println!(
            "captioned {} posts, kept {} existing captions, {} warning(s) -> {}",
            outcome.captioned,
            outcome.kept,
            outcome.warnings,
            target.display()
        );
        Ok(())
    }

    fn train(&self, cfg: ExperimentConfig, data: &DataArgs) -> CliResult<()> {
        let mut cfg = cfg;
        if let Some(e) = data.epochs {
            cfg.train.epochs = e;
            cfg.validate()?;
        }
        let (split, hash, notes) = self.load_split(&cfg, data)?;
        let res = Resources::load(&cfg.model)?;
        let result = run_experiment(&cfg, &split, &res, Exec::default(), print_epoch)?;
        let mut run = self.run_dir(&cfg, &hash)?;
        run.set_dataset_hash(hash);
        for (k, v) in notes {
            run.note(k, v);
        }
        write_training_artifacts(&mut run, &cfg, &result)?;
        let dir = run.path().to_path_buf();
        run.finish()?;
        print_result(&result, &dir);
        Ok(())
    }

    fn load_split(&self, cfg: &ExperimentConfig, data: &DataArgs) -> CliResult<LoadedSplit> {
        let main = primary_samples(data.dataset.as_deref(), cfg)?;
        let mut skipped = (main.skipped_samples, main.skipped_evidence_images);
        let mut extra = |p: &Option<PathBuf>| -> CliResult<_> {
            p.as_deref()
                .map(|p| {
                    let l = load_samples(p, cfg)?;
                    skipped.0 += l.skipped_samples;
                    skipped.1 += l.skipped_evidence_images;
                    Ok(l.samples)
                })
                .transpose()
        };
        let val = extra(&data.val)?;
        let test = extra(&data.test)?;
        let hash = dataset_hash(
            main.samples
                .iter()
                .chain(val.iter().flatten())
                .chain(test.iter().flatten()),
        );
        let split = make_split(main.samples, val, test, cfg)?;
        let notes = vec![
            ("skipped_samples", skipped.0),
            ("skipped_evidence_images", skipped.1),
            ("train_samples", split.train.len()),
            ("val_samples", split.val.len()),
            ("test_samples", split.test.len()),
        ];
        Ok((split, hash, notes))
    }

    fn eval(&self, cfg: ExperimentConfig, checkpoint: &Path, dataset: &Path) -> CliResult<()> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let (model, store) = ckpt.restore(&Resources::load(&ckpt.model)?)?;
        let loaded = load_samples(dataset, &cfg)?;
        let inputs = model.prepare_all(&loaded.samples, Exec::default())?;
        let (report, out) = evaluate(&model, &store, &inputs, ckpt.train.batch_size, Exec::default())?;
        let hash = dataset_hash(&loaded.samples);
        let rows: Vec<_> = loaded.samples.iter().map(|s| (s.id.clone(), s.label)).collect();

        let mut run = self.run_dir(&checkpoint_config(&cfg, &ckpt), &hash)?;
        run.set_dataset_hash(hash);
        run.note("checkpoint", checkpoint.display().to_string());
        run.note("skipped_samples", loaded.skipped_samples);
        run.write("metrics.json", metrics_json(&report).as_bytes())?;
        run.write("confusion.csv", report.confusion_csv().as_bytes())?;
        run.write("features.csv", features_csv(&rows, &out.features).as_bytes())?;
        let dir = run.path().to_path_buf();
        run.finish()?;
        println!("{}", report.table());
        println!("run directory: {}", dir.display());
        Ok(())
    }

    fn ablate(&self, cfg: ExperimentConfig, flags: &[String], baseline: bool, data: &DataArgs) -> CliResult<()> {
        let names = expand_flags(flags)?;
        let mut cfg = cfg;
        if let Some(e) = data.epochs {
            cfg.train.epochs = e;
        }
        let (split, hash, _) = self.load_split(&cfg, data)?;
        let res = Resources::load(&cfg.model)?;
        let mut variants: Vec<(String, AblationFlags)> = Vec::new();
        if baseline {
            variants.push(("full".into(), cfg.model.ablation));
        }
        for name in names {
            variants.push((name.to_string(), AblationFlags::single(name)?));
        }

        let mut run = self.run_dir(&cfg, &hash)?;
        run.set_dataset_hash(hash);
        let mut summary = String::from("variant,macro_accuracy,trainable_params,checkpoint_epoch\n");
        for (name, flags) in variants {
            let mut v = cfg.clone();
            v.model.ablation = flags;
            v.validate()?;
            eprintln!("variant {name}");
            let result = run_experiment(&v, &split, &res, Exec::default(), print_epoch)?;
            let sub = format!("{name}/");
            run.write(&format!("{sub}config.json"), v.to_json().as_bytes())?;
            run.write(&format!("{sub}checkpoint.bin"), &result.checkpoint.to_bytes())?;
            run.write(
                &format!("{sub}metrics.json"),
                metrics_json(&result.test_report).as_bytes(),
            )?;
            run.write(
                &format!("{sub}confusion.csv"),
                result.test_report.confusion_csv().as_bytes(),
            )?;
            run.write(
                &format!("{sub}loss_curve.csv"),
                result.test_report.loss_curve_csv().as_bytes(),
            )?;
            summary.push_str(&format!(
                "{name},{:?},{},{}\n",
                result.test_report.macro_accuracy, result.trainable_params, result.checkpoint.epoch
            ));
        }
        run.write("ablation.csv", summary.as_bytes())?;
        let dir = run.path().to_path_buf();
        run.finish()?;
        print!("{summary}");
        println!("run directory: {}", dir.display());
        Ok(())
    }

    fn sweep(&self, cfg: ExperimentConfig, k_min: usize, k_max: usize, data: &DataArgs) -> CliResult<()> {
        if k_min < 1 || k_min > k_max {
            return Err(CliError::Usage(format!(
                "need 1 <= k-min <= k-max, got {k_min}..{k_max}"
            )));
        }
        let mut cfg = cfg;
        if let Some(e) = data.epochs {
            cfg.train.epochs = e;
        }
        cfg.data.load_max_evidence = cfg.data.load_max_evidence.max(k_max);
        let (split, hash, _) = self.load_split(&cfg, data)?;
        let res = Resources::load(&cfg.model)?;
        let mut run = self.run_dir(&cfg, &hash)?;
        run.set_dataset_hash(hash);
        run.write("config.json", cfg.to_json().as_bytes())?;
        let mut table = String::from("k,macro_accuracy\n");
        for k in k_min..=k_max {
            let mut v = cfg.clone();
            v.model.max_evidence = k;
            v.validate()?;
            eprintln!("max_evidence {k}");
            let result = run_experiment(&v, &split, &res, Exec::default(), print_epoch)?;
            table.push_str(&format!("{k},{:?}\n", result.test_report.macro_accuracy));
        }
        run.write("sweep.csv", table.as_bytes())?;
        let dir = run.path().to_path_buf();
        run.finish()?;
        print!("{table}");
        println!("run directory: {}", dir.display());
        Ok(())
    }

    fn export_features(&self, cfg: ExperimentConfig, checkpoint: &Path, dataset: &Path) -> CliResult<()> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let (model, store) = ckpt.restore(&Resources::load(&ckpt.model)?)?;
        let loaded = load_samples(dataset, &cfg)?;
        let inputs = model.prepare_all(&loaded.samples, Exec::default())?;
        let out = model.forward_all(&store, &inputs, ckpt.train.batch_size, Exec::default())?;
        let rows: Vec<_> = loaded.samples.iter().map(|s| (s.id.clone(), s.label)).collect();
        let hash = dataset_hash(&loaded.samples);
        let mut run = self.run_dir(&checkpoint_config(&cfg, &ckpt), &hash)?;
        run.set_dataset_hash(hash);
        run.note("checkpoint", checkpoint.display().to_string());
        let path = run.write("features.csv", features_csv(&rows, &out.features).as_bytes())?;
        run.finish()?;
        println!(
            "{} rows x {} features -> {}",
            rows.len(),
            out.features.ncols(),
            path.display()
        );
        Ok(())
    }

    fn report(&self, cfg: ExperimentConfig, metrics: &Path) -> CliResult<()> {
        let text = fs::read_to_string(metrics).map_err(|e| CliError::io(metrics, e))?;
        let parsed: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{}: not a metrics file: {e}", metrics.display())))?;
        // Recompute from the counts so a hand-edited file cannot disagree with itself.
        let mut report = MetricsReport::from_confusion(parsed.confusion)?;
        report.loss_history = parsed.loss_history;
        let mut run = self.run_dir(&cfg, &sha256_hex(text.as_bytes()))?;
        run.note("metrics", metrics.display().to_string());
        let path = run.write("confusion.csv", report.confusion_csv().as_bytes())?;
        run.finish()?;
        println!("{}", report.table());
        println!("confusion matrix -> {}", path.display());
        Ok(())
    }

    fn synth_data(
        &self,
        cfg: ExperimentConfig,
        n: usize,
        signals: SignalChoice,
        captions: bool,
        name: &str,
    ) -> CliResult<()> {
        let spec = match signals {
            SignalChoice::All => SignalSpec::default(),
            SignalChoice::ForgeryOnly => SignalSpec::forgery_only(),
        };
        let mut opts = SyntheticOptions::new(n, cfg.seed, spec);
        opts.with_captions = captions;
        opts.evidence_items = cfg.data.load_max_evidence.max(1);
        let samples = generate_synthetic_with(&opts, Exec::default())?;
        let hash = dataset_hash(&samples);
        let mut run = self.run_dir(&cfg, &hash)?;
        run.set_dataset_hash(hash);
        let path = write_dataset(&samples, run.path(), name)?;
        for (_, rec) in read_records(&path)? {
            for img in std::iter::once(&rec.image).chain(&rec.image_evidence) {
                run.record_external(&run.path().join(img))?;
            }
        }
        run.record_external(&path)?;
        run.note("samples", n);
        run.finish()?;
        println!("{n} samples -> {}", path.display());
        Ok(())
    }

    fn spectrum(&self, cfg: ExperimentConfig, image: &Path) -> CliResult<()> {
        let img = Image::load(image, IMAGE_SIZE)?;
        let spec = SpectrumFeature::from_image(&img)?;
        let mut run = self.run_dir(&cfg, &sha256_hex(img.as_bytes()))?;
        let path = run.path().join("spectrum.csv");
        spec.write_csv(&path)?;
        run.record_external(&path)?;
        run.finish()?;
        println!("{}", path.display());
        Ok(())
    }
}

/// The invocation's config with the checkpoint's model and recipe, so the
/// manifest describes the weights actually used.
fn checkpoint_config(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.model = ckpt.model.clone();
    c.train = ckpt.train.clone();
    c.seed = ckpt.seed;
    c
}

fn print_result(r: &ExperimentResult, dir: &Path) {
    println!("{}", r.test_report.table());
    println!(
        "checkpoint from epoch {} (best validation accuracy {:.4}); run directory: {}",
        r.checkpoint.epoch,
        r.checkpoint.best_val_accuracy,
        dir.display()
    );
}

/// Validates ablation names, expanding `all`.
pub fn expand_flags(flags: &[String]) -> CliResult<Vec<&'static str>> {
    let mut out = Vec::new();
    for f in flags {
        let f = f.replace('-', "_");
        if f == "all" {
            out.extend(AblationFlags::NAMES);
            continue;
        }
        match AblationFlags::NAMES.iter().find(|n| **n == f) {
            Some(n) => out.push(*n),
            None => {
                return Err(CliError::Usage(format!(
                    "unknown ablation `{f}`; valid flags: all, {}",
                    AblationFlags::NAMES.join(", ")
                )))
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|n| seen.insert(*n));
    Ok(out)
}

pub struct CaptionOutcome {
    pub text: String,
    pub captioned: usize,
    pub kept: usize,
    pub warnings: usize,
}

/// `data.jsonl` → `data.captioned.jsonl` in the same directory.
pub fn captioned_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = stem.strip_suffix(".jsonl").unwrap_or(&stem);
    dataset.with_file_name(format!("{stem}.captioned.jsonl"))
}

/// Fills missing captions line by line. Lines that already carry a caption
/// are copied byte for byte, so a fully captioned file comes back unchanged.
pub fn caption_dataset(dataset: &Path, generator: &dyn CaptionGenerator) -> CliResult<CaptionOutcome> {
    let text = fs::read_to_string(dataset).map_err(|e| CliError::io(dataset, e))?;
    let base = dataset.parent().map(Path::to_path_buf).unwrap_or_default();
    let lines: Vec<(usize, &str)> = text.split_inclusive('\n').enumerate().collect();
    let results = Exec::default().map(&lines, |&(i, raw)| -> CliResult<(String, u8)> {
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            return Ok((raw.to_string(), 0));
        }
        let mut rec: Record = mmrd_core::dataset::parse_record(line, dataset, i + 1)?;
        if rec.caption.is_some() {
            return Ok((raw.to_string(), 1));
        }
        let (caption, warned) = match Image::load(&base.join(&rec.image), IMAGE_SIZE) {
            Ok(image) => {
                let req = CaptionRequest {
                    id: &rec.id,
                    image: &image,
                    synthetic: rec.synthetic.as_ref(),
                };
                generate_caption(generator, &req)
            }
            Err(e) => {
                log::warn!("{}: cannot caption {}: {e}", dataset.display(), rec.id);
                (String::new(), true)
            }
        };
        rec.caption = Some(caption);
        let mut out = serde_json::to_string(&rec).expect("record serializes");
        out.push_str(&raw[line.len()..]);
        Ok((out, if warned { 3 } else { 2 }))
    });
    let mut outcome = CaptionOutcome {
        text: String::with_capacity(text.len()),
        captioned: 0,
        kept: 0,
        warnings: 0,
    };
    for r in results {
        let (line, status) = r?;
        outcome.text.push_str(&line);
        match status {
            1 => outcome.kept += 1,
            2 => outcome.captioned += 1,
            3 => {
                outcome.captioned += 1;
                outcome.warnings += 1;
            }
            _ => {}
        }
    }
    Ok(outcome)
}
