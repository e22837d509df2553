//! Text, image and caption encoders behind small enums, so the model can run
//! either the trainable toy networks or frozen precomputed features.

mod caption;
mod pretrained;
mod text;
mod visual;

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::params::{Gradients, ParamId, ParamStore};

pub use caption::{generate_caption, CaptionGenerator, CaptionRequest, CaptionTable, SyntheticOracleCaptioner};
pub use pretrained::{FeatureKey, FeatureTable};
pub use text::{tokenize, truncate_to_max_tokens, TextTrace, ToyTextEncoder};
pub use visual::{thumbnail, ImageTrace, ToyImageEncoder, THUMBNAIL_SIZE};

/// Per-item input cached before training.
#[derive(Debug, Clone, PartialEq)]
pub enum TextInput {
    Tokens(Vec<u32>),
    Fixed(Array1<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageInput {
    Thumbnail(Array3<f64>),
    Fixed(Array1<f64>),
}

#[derive(Debug, Clone)]
pub enum TextEncoder {
    Toy(ToyTextEncoder),
    Pretrained(Arc<FeatureTable>),
}

/// Built once per model, so the size gap between variants does not matter.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum ImageEncoder {
    Toy(ToyImageEncoder),
    Pretrained(Arc<FeatureTable>),
}

impl TextEncoder {
    pub fn dim(&self) -> usize {
        match self {
            TextEncoder::Toy(e) => e.dim,
            TextEncoder::Pretrained(t) => t.dim(),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            TextEncoder::Toy(e) => e.params(),
            TextEncoder::Pretrained(_) => Vec::new(),
        }
    }

    pub fn prepare(&self, text: &str, key: FeatureKey<'_>) -> Result<TextInput> {
        Ok(match self {
            TextEncoder::Toy(e) => TextInput::Tokens(e.token_ids(text)),
            TextEncoder::Pretrained(t) => TextInput::Fixed(t.lookup(key)?),
        })
    }

    pub fn forward(&self, p: &ParamStore, input: &TextInput) -> (Array1<f64>, Option<TextTrace>) {
        match (self, input) {
            (TextEncoder::Toy(e), TextInput::Tokens(ids)) => {
                let (h, t) = e.forward(p, ids);
                (h, Some(t))
            }
            (_, TextInput::Fixed(v)) => (v.clone(), None),
            (TextEncoder::Pretrained(_), TextInput::Tokens(_)) => {
                panic!("token input given to a feature-table text encoder")
            }
        }
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Gradients, trace: Option<&TextTrace>, d: ArrayView1<'_, f64>) {
        if let (TextEncoder::Toy(e), Some(t)) = (self, trace) {
            e.backward(p, g, t, d);
        }
    }

    /// Encodes one text directly; `key` is only used by feature tables.
    pub fn encode_text(&self, p: &ParamStore, text: &str, key: FeatureKey<'_>) -> Result<Array1<f64>> {
        Ok(self.forward(p, &self.prepare(text, key)?).0)
    }
}

impl ImageEncoder {
    pub fn dim(&self) -> usize {
        match self {
            ImageEncoder::Toy(e) => e.dim,
            ImageEncoder::Pretrained(t) => t.dim(),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            ImageEncoder::Toy(e) => e.params(),
            ImageEncoder::Pretrained(_) => Vec::new(),
        }
    }

    pub fn prepare(&self, image: &Image, key: FeatureKey<'_>) -> Result<ImageInput> {
        Ok(match self {
            ImageEncoder::Toy(_) => ImageInput::Thumbnail(thumbnail(image)?),
            ImageEncoder::Pretrained(t) => ImageInput::Fixed(t.lookup(key)?),
        })
    }

    pub fn forward(&self, p: &ParamStore, input: &ImageInput) -> Result<(Array1<f64>, Option<ImageTrace>)> {
        match (self, input) {
            (ImageEncoder::Toy(e), ImageInput::Thumbnail(x)) => {
                let (h, t) = e.forward(p, x.view())?;
                Ok((h, Some(t)))
            }
            (_, ImageInput::Fixed(v)) => Ok((v.clone(), None)),
            (ImageEncoder::Pretrained(_), ImageInput::Thumbnail(_)) => {
                Err(Error::invalid("pixel input given to a feature-table image encoder"))
            }
        }
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        input: &ImageInput,
        trace: Option<&ImageTrace>,
        d: ArrayView1<'_, f64>,
    ) {
        if let (ImageEncoder::Toy(e), ImageInput::Thumbnail(x), Some(t)) = (self, input, trace) {
            e.backward(p, g, x.view(), t, d);
        }
    }

    pub fn encode_image(&self, p: &ParamStore, image: &Image, key: FeatureKey<'_>) -> Result<Array1<f64>> {
        Ok(self.forward(p, &self.prepare(image, key)?)?.0)
    }
}

/// Stacks per-item encodings into a zero-padded `[max_items, dim]` matrix
/// and its validity mask.
pub fn encode_evidence(items: &[Array1<f64>], max_items: usize, dim: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    if items.len() > max_items {
        return Err(Error::invalid(format!(
            "{} evidence items exceed the cap of {max_items}",
            items.len()
        )));
    }
    let mut m = Array2::zeros((max_items, dim));
    for (k, v) in items.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::shape(format!(
                "evidence item {k} has length {}, expected {dim}",
                v.len()
            )));
        }
        m.row_mut(k).assign(v);
    }
    Ok((m, (0..max_items).map(|k| k < items.len()).collect()))
}
