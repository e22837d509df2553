//! Caption generators used by the `prepare` step.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dataset::SyntheticMeta;
use crate::error::{Error, Result};
use crate::image::Image;

/// What a captioner may look at for one post.
#[derive(Debug, Clone, Copy)]
pub struct CaptionRequest<'a> {
    pub id: &'a str,
    pub image: &'a Image,
    pub synthetic: Option<&'a SyntheticMeta>,
}

/// Deterministic image → text mapping.
pub trait CaptionGenerator: Sync {
    fn generate(&self, req: &CaptionRequest<'_>) -> Result<String>;
}

/// Reads the generator's ground truth, e.g. "a red circle".
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticOracleCaptioner;

impl CaptionGenerator for SyntheticOracleCaptioner {
    fn generate(&self, req: &CaptionRequest<'_>) -> Result<String> {
        req.synthetic
            .map(|m| m.shown.caption())
            .ok_or_else(|| Error::MissingResource(format!("synthetic metadata for {}", req.id)))
    }
}

/// Captions produced offline by a pretrained captioner, keyed by post id.
#[derive(Debug, Clone)]
pub struct CaptionTable {
    source: PathBuf,
    captions: HashMap<String, String>,
}

#[derive(Deserialize)]
struct CaptionRow {
    id: String,
    caption: String,
}

impl CaptionTable {
    pub fn open(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::MissingResource(format!("caption table {}: {e}", path.display())))?;
        let mut captions = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: CaptionRow = serde_json::from_str(line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            captions.insert(row.id, row.caption);
        }
        Ok(Self {
            source: path.to_path_buf(),
            captions,
        })
    }
}

impl CaptionGenerator for CaptionTable {
    fn generate(&self, req: &CaptionRequest<'_>) -> Result<String> {
        match self.captions.get(req.id) {
            Some(c) if !c.trim().is_empty() => Ok(c.clone()),
            _ => Err(Error::MissingResource(format!(
                "caption for {} in {}",
                req.id,
                self.source.display()
            ))),
        }
    }
}

/// Runs a generator, turning failure into an empty caption plus a flag.
pub fn generate_caption(gen: &dyn CaptionGenerator, req: &CaptionRequest<'_>) -> (String, bool) {
    match gen.generate(req) {
        Ok(c) if !c.is_empty() => (c, false),
        Ok(_) => (String::new(), true),
        Err(e) => {
            log::warn!("caption generation failed: {e}");
            (String::new(), true)
        }
    }
}
