//! Dataset schema, JSON-lines ingestion, deterministic splitting and
//! mini-batching with evidence masks.

mod synthetic;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{Image, IMAGE_SIZE};

pub use synthetic::{
    generate_synthetic_dataset, generate_synthetic_with, oracle_label, Color, EvidenceKind, ShapeDesc, ShapeKind,
    SignalSpec, SyntheticMeta, SyntheticOptions, STAMP_AMPLITUDE, STAMP_PERIOD,
};

/// Default cap on evidence items per post.
pub const DEFAULT_MAX_EVIDENCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    NonRumor = 0,
    Rumor = 1,
    Unverified = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::NonRumor, Label::Rumor, Label::Unverified];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::NonRumor => "non-rumor",
            Label::Rumor => "rumor",
            Label::Unverified => "unverified",
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0, 1 or 2, got {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

/// One post with its retrieved evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub image: Image,
    /// Cached captioner output; `Some("")` marks a failed generation.
    pub caption: Option<String>,
    pub text_evidence: Vec<String>,
    pub image_evidence: Vec<Image>,
    pub label: Label,
    /// Ground truth kept by the synthetic generator.
    pub synthetic: Option<SyntheticMeta>,
}

impl Sample {
    /// Drops evidence beyond the first `k` items of each list.
    pub fn cap_evidence(&mut self, k: usize) {
        self.text_evidence.truncate(k);
        self.image_evidence.truncate(k);
    }
}

/// Evidence list lengths, used to build batch masks.
pub trait EvidenceCounts {
    fn text_evidence_len(&self) -> usize;
    fn image_evidence_len(&self) -> usize;
}

impl EvidenceCounts for Sample {
    fn text_evidence_len(&self) -> usize {
        self.text_evidence.len()
    }
    fn image_evidence_len(&self) -> usize {
        self.image_evidence.len()
    }
}

/// On-disk JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub image: String,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub text_evidence: Vec<String>,
    #[serde(default)]
    pub image_evidence: Vec<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMeta>,
}

pub fn parse_record(line: &str, path: &Path, line_no: usize) -> Result<Record> {
    serde_json::from_str(line).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads all non-blank records of a JSONL file with their 1-based line numbers.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Record)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_record(line, path, i + 1)?));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    /// Samples dropped because their post image could not be read.
    pub skipped_samples: usize,
    /// Evidence images dropped because they could not be read.
    pub skipped_evidence_images: usize,
}

/// Loads a JSONL dataset, resizing images to 256×256 and keeping the first
/// `max_evidence` items of each evidence list.
pub fn load_dataset(path: &Path, max_evidence: usize, exec: Exec) -> Result<LoadedDataset> {
    let records = read_records(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = exec.map(&records, |(_, rec)| load_sample(&base, rec, max_evidence));
    let mut samples = Vec::with_capacity(loaded.len());
    let mut skipped_samples = 0;
    let mut skipped_evidence_images = 0;
    for ((line, rec), res) in records.iter().zip(loaded) {
        match res {
            Ok((sample, bad_ev)) => {
                skipped_evidence_images += bad_ev;
                samples.push(sample);
            }
            Err(e) => {
                log::warn!("{}:{line}: skipping sample {}: {e}", path.display(), rec.id);
                skipped_samples += 1;
            }
        }
    }
    Ok(LoadedDataset {
        samples,
        skipped_samples,
        skipped_evidence_images,
    })
}

fn load_sample(base: &Path, rec: &Record, max_evidence: usize) -> Result<(Sample, usize)> {
    let image = Image::load(&base.join(&rec.image), IMAGE_SIZE)?;
    let mut image_evidence = Vec::new();
    let mut bad = 0;
    for p in rec.image_evidence.iter().take(max_evidence) {
        match Image::load(&base.join(p), IMAGE_SIZE) {
            Ok(img) => image_evidence.push(img),
            Err(e) => {
                log::warn!("sample {}: dropping evidence image: {e}", rec.id);
                bad += 1;
            }
        }
    }
    let sample = Sample {
        id: rec.id.clone(),
        text: rec.text.clone(),
        image,
        caption: rec.caption.clone(),
        text_evidence: rec.text_evidence.iter().take(max_evidence).cloned().collect(),
        image_evidence,
        label: rec.label,
        synthetic: rec.synthetic.clone(),
    };
    Ok((sample, bad))
}

/// Writes samples as `dir/<file_name>` plus PNGs under `dir/images/`.
pub fn write_dataset(samples: &[Sample], dir: &Path, file_name: &str) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let path = dir.join(file_name);
    let mut out = Vec::new();
    for s in samples {
        let image = format!("images/{}.png", s.id);
        s.image.save_png(&dir.join(&image))?;
        let mut image_evidence = Vec::with_capacity(s.image_evidence.len());
        for (k, img) in s.image_evidence.iter().enumerate() {
            let p = format!("images/{}_ev{k}.png", s.id);
            img.save_png(&dir.join(&p))?;
            image_evidence.push(p);
        }
        let rec = Record {
            id: s.id.clone(),
            text: s.text.clone(),
            image,
            caption: s.caption.clone(),
            text_evidence: s.text_evidence.clone(),
            image_evidence,
            label: s.label,
            synthetic: s.synthetic.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T = Sample> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Default 8:1:1 split.
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffled index partition: `floor(r0·N)` train, `floor(r1·N)` val, the
/// remainder test.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratios[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

pub fn split_dataset<T>(samples: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit<T>> {
    let [tr, va, te] = split_indices(samples.len(), ratios, seed)?;
    let mut slots: Vec<Option<T>> = samples.into_iter().map(Some).collect();
    let mut take = |ids: Vec<usize>| -> Vec<T> {
        ids.into_iter()
            .map(|i| slots[i].take().expect("index used once"))
            .collect()
    };
    Ok(DatasetSplit {
        train: take(tr),
        val: take(va),
        test: take(te),
        seed,
        ratios,
    })
}

/// A mini-batch referencing samples by index, with `B×K` evidence masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub text_evidence_mask: Vec<Vec<bool>>,
    pub image_evidence_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn gather<'a, T>(&self, items: &'a [T]) -> Vec<&'a T> {
        self.indices.iter().map(|&i| &items[i]).collect()
    }
}

pub fn evidence_mask(len: usize, max_evidence: usize) -> Vec<bool> {
    (0..max_evidence).map(|k| k < len).collect()
}

/// Splits `items` into batches of `batch_size` (last may be short), in a
/// seeded shuffled order when `shuffle_seed` is given.
pub fn make_batches<T: EvidenceCounts>(
    items: &[T],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    max_evidence: usize,
) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            text_evidence_mask: chunk
                .iter()
                .map(|&i| evidence_mask(items[i].text_evidence_len(), max_evidence))
                .collect(),
            image_evidence_mask: chunk
                .iter()
                .map(|&i| evidence_mask(items[i].image_evidence_len(), max_evidence))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    struct Counts(usize, usize);
    impl EvidenceCounts for Counts {
        fn text_evidence_len(&self) -> usize {
            self.0
        }
        fn image_evidence_len(&self) -> usize {
            self.1
        }
    }

    fn write_lines(dir: &Path, lines: &[String]) -> PathBuf {
        let p = dir.join("data.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    fn record_json(id: &str, n_text_ev: usize, label: Option<u8>) -> String {
        let ev: Vec<String> = (0..n_text_ev).map(|k| format!("evidence {k}")).collect();
        let mut v = serde_json::json!({
            "id": id, "text": format!("post {id}"), "image": "img.png",
            "caption": null, "text_evidence": ev, "image_evidence": ["img.png", "img.png"],
        });
        if let Some(l) = label {
            v["label"] = l.into();
        }
        v.to_string()
    }

    #[test]
    fn loads_records_in_file_order_and_caps_evidence() {
        let dir = tempfile::tempdir().unwrap();
        Image::solid(32, 32, [0.5, 0.5, 0.5])
            .save_png(&dir.path().join("img.png"))
            .unwrap();
        let path = write_lines(
            dir.path(),
            &[
                record_json("a", 1, Some(0)),
                record_json("b", 9, Some(1)),
                record_json("c", 0, Some(2)),
            ],
        );
        let ds = load_dataset(&path, 5, Exec::Sequential).unwrap();
        let ids: Vec<_> = ds.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(ds.samples[1].text_evidence.len(), 5);
        assert_eq!(ds.samples[1].text_evidence[4], "evidence 4");
        assert_eq!(ds.samples[0].image.height(), IMAGE_SIZE);
        assert_eq!(ds.samples[2].label, Label::Unverified);
    }

    #[test]
    fn missing_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[record_json("a", 0, Some(0)), record_json("b", 0, None)]);
        match load_dataset(&path, 5, Exec::Sequential) {
            Err(Error::Record { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"));
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_empty_file_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[record_json("a", 0, Some(7))]);
        assert!(matches!(
            load_dataset(&path, 5, Exec::Sequential),
            Err(Error::Record { line: 1, .. })
        ));
        let empty = write_lines(dir.path(), &["".into(), "  ".into()]);
        assert!(matches!(
            load_dataset(&empty, 5, Exec::Sequential),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn unreadable_image_skips_sample() {
        let dir = tempfile::tempdir().unwrap();
        Image::solid(8, 8, [0.1, 0.2, 0.3])
            .save_png(&dir.path().join("img.png"))
            .unwrap();
        let broken = record_json("x", 0, Some(1)).replace("\"image\":\"img.png\"", "\"image\":\"missing.png\"");
        let path = write_lines(dir.path(), &[record_json("a", 0, Some(0)), broken]);
        let ds = load_dataset(&path, 5, Exec::Sequential).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.skipped_samples, 1);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let [tr, va, te] = split_indices(100, DEFAULT_RATIOS, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let [tr, va, te] = split_indices(63, DEFAULT_RATIOS, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (50, 6, 7));
        assert_eq!(
            split_indices(100, DEFAULT_RATIOS, 7).unwrap(),
            split_indices(100, DEFAULT_RATIOS, 7).unwrap()
        );
        assert!(split_indices(9, DEFAULT_RATIOS, 1).is_err());
        assert!(split_indices(50, [0.5, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn split_dataset_moves_items() {
        let items: Vec<u32> = (0..20).collect();
        let s = split_dataset(items, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 2));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(seed in any::<u64>(), n in 10usize..1500) {
            let [tr, va, te] = split_indices(n, DEFAULT_RATIOS, seed).unwrap();
            let all: HashSet<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(tr.len() + va.len() + te.len(), n);
            prop_assert!(all.iter().all(|&i| i < n));
        }

        #[test]
        fn masks_match_evidence(lens in proptest::collection::vec((0usize..6, 0usize..6), 1..40), bs in 1usize..9) {
            let items: Vec<Counts> = lens.iter().map(|&(a, b)| Counts(a, b)).collect();
            let batches = make_batches(&items, bs, Some(1), 5).unwrap();
            let mut seen = 0;
            for b in &batches {
                for (row, &i) in b.indices.iter().enumerate() {
                    for k in 0..5 {
                        prop_assert_eq!(b.text_evidence_mask[row][k], k < items[i].0);
                        prop_assert_eq!(b.image_evidence_mask[row][k], k < items[i].1);
                    }
                }
                seen += b.len();
            }
            prop_assert_eq!(seen, items.len());
        }
    }

    #[test]
    fn batches_cover_samples() {
        let items: Vec<Counts> = (0..100).map(|i| Counts(i % 3, 0)).collect();
        let batches = make_batches(&items, 32, None, 5).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, [32, 32, 32, 4]);
        let two = [Counts(2, 0)];
        let b = make_batches(&two, 4, None, 5).unwrap();
        assert_eq!(b[0].text_evidence_mask[0], [true, true, false, false, false]);
        assert_eq!(
            make_batches(&items, 8, Some(9), 5).unwrap(),
            make_batches(&items, 8, Some(9), 5).unwrap()
        );
        assert_ne!(
            make_batches(&items, 8, Some(9), 5).unwrap(),
            make_batches(&items, 8, Some(10), 5).unwrap()
        );
        assert!(make_batches(&items, 0, None, 5).is_err());
    }
}
