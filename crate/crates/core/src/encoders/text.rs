//! Toy text encoder: hashed-token embeddings, mean pooling, `tanh` projection.

use ndarray::{Array1, ArrayView1};

use crate::nn::act::{tanh, tanh_backward};
use crate::nn::Linear;
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff | 0x3400..=0x4dbf | 0x4e00..=0x9fff | 0xac00..=0xd7af | 0xf900..=0xfaff)
}

/// Byte spans of the tokens in `text`: lowercase-insensitive alphanumeric
/// runs, with each CJK character standing alone.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_cjk(c) {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            spans.push((i, i + c.len_utf8()));
        } else if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercased tokens of `text`, at most `max_tokens` of them.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .take(max_tokens)
        .map(|(a, b)| text[a..b].to_lowercase())
        .collect()
}

/// The prefix of `text` ending with its `max_tokens`-th token.
pub fn truncate_to_max_tokens(text: &str, max_tokens: usize) -> &str {
    match token_spans(text).get(max_tokens.wrapping_sub(1)) {
        Some(&(_, end)) if max_tokens > 0 => &text[..end],
        _ if max_tokens == 0 => "",
        _ => text,
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    pub dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    embedding: ParamId,
    proj: Linear,
}

#[derive(Debug, Clone)]
pub struct TextTrace {
    ids: Vec<u32>,
    mean: Array1<f64>,
    out: Array1<f64>,
}

impl ToyTextEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, vocab_size: usize, max_tokens: usize) -> Self {
        let embedding = pb.add(format!("{name}.embedding"), &[vocab_size, dim], Init::TruncNormal(0.5));
        let proj = Linear::new(pb, &format!("{name}.proj"), dim, dim, true, Init::FanIn(dim));
        Self {
            dim,
            vocab_size,
            max_tokens,
            embedding,
            proj,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.embedding];
        v.extend(self.proj.params());
        v
    }

    /// Token ids after truncation to `max_tokens`.
    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        tokenize(text, self.max_tokens)
            .iter()
            .map(|t| (fnv1a(t) % self.vocab_size as u64) as u32)
            .collect()
    }

    pub fn encode(&self, p: &ParamStore, text: &str) -> Array1<f64> {
        self.forward(p, &self.token_ids(text)).0
    }

    pub fn forward(&self, p: &ParamStore, ids: &[u32]) -> (Array1<f64>, TextTrace) {
        let emb = p.mat(self.embedding);
        let mut mean = Array1::<f64>::zeros(self.dim);
        for &id in ids {
            mean += &emb.row(id as usize);
        }
        if !ids.is_empty() {
            mean /= ids.len() as f64;
        }
        let out = tanh(self.proj.forward(p, mean.view()).view());
        (
            out.clone(),
            TextTrace {
                ids: ids.to_vec(),
                mean,
                out,
            },
        )
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Gradients, t: &TextTrace, d_out: ArrayView1<'_, f64>) {
        let d_pre = tanh_backward(t.out.view(), d_out);
        let d_mean = self.proj.backward(p, g, t.mean.view(), d_pre.view());
        if t.ids.is_empty() {
            return;
        }
        let scale = 1.0 / t.ids.len() as f64;
        let mut ge = g.mat_mut(self.embedding);
        for &id in &t.ids {
            ge.row_mut(id as usize).scaled_add(scale, &d_mean);
        }
    }
}
