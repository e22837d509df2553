//! Trainable forgery head: CNN backbone → multi-scale branches →
//! multi-head self-attention over spatial positions → GAP → FC.
//!
//! Each spectrum channel is standardized before the backbone. Raw
//! log-amplitudes sit on a large positive offset, which would leave every
//! first-layer unit in the same regime of its nonlinearity.

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::act::{silu, silu_backward};
use crate::nn::{attend, attend_backward, avg_pool, avg_pool_backward, Conv2d, Linear};
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

use super::spectrum::CROP_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeryConfig {
    /// Output dimension `f` of the forgery feature.
    pub feature_dim: usize,
    /// Channels of every backbone block.
    pub backbone_channels: usize,
    /// Number of stride-2 `3×3` conv blocks; each halves the spatial size.
    pub backbone_blocks: usize,
    /// Channels per multi-scale branch; the sequence width is 4× this.
    pub branch_channels: usize,
    pub heads: usize,
}

impl Default for ForgeryConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            backbone_channels: 32,
            backbone_blocks: 2,
            branch_channels: 16,
            heads: 4,
        }
    }
}

impl ForgeryConfig {
    pub fn sequence_channels(&self) -> usize {
        4 * self.branch_channels
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.sequence_channels();
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(Error::Config {
                path: "model.forgery.heads".into(),
                message: format!("sequence width {c} is not divisible by {} heads", self.heads),
            });
        }
        if self.backbone_blocks == 0 || CROP_SIZE >> self.backbone_blocks == 0 {
            return Err(Error::Config {
                path: "model.forgery.backbone_blocks".into(),
                message: format!("{} blocks do not fit a {CROP_SIZE}px spectrum", self.backbone_blocks),
            });
        }
        if self.feature_dim == 0 || self.backbone_channels == 0 || self.branch_channels == 0 {
            return Err(Error::Config {
                path: "model.forgery".into(),
                message: "dimensions must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForgeryHead {
    pub config: ForgeryConfig,
    backbone: Vec<Conv2d>,
    branch1: Conv2d,
    branch3: Conv2d,
    branch5: Conv2d,
    branch_pool: Conv2d,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    fc: Linear,
}

/// Forward state needed by [`ForgeryHead::backward`].
#[derive(Debug, Clone)]
pub struct ForgeryTrace {
    input: Array3<f64>,
    block_pre: Vec<Array3<f64>>,
    block_out: Vec<Array3<f64>>,
    pooled: Array3<f64>,
    branch_pre: [Array3<f64>; 4],
    z: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    heads_concat: Array2<f64>,
    gap: Array1<f64>,
}

impl ForgeryTrace {
    /// Flattened sequence `Z ∈ R^{L×C}` fed to self-attention.
    pub fn sequence(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn queries(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn keys(&self) -> &Array2<f64> {
        &self.k
    }
}

impl ForgeryHead {
    pub fn new(pb: &mut ParamBuilder, config: &ForgeryConfig) -> Self {
        let cb = config.backbone_channels;
        let cbr = config.branch_channels;
        let c = config.sequence_channels();
        let backbone = (0..config.backbone_blocks)
            .map(|i| {
                let cin = if i == 0 { 3 } else { cb };
                Conv2d::new(pb, &format!("forgery.backbone{i}"), cin, cb, 3, 2)
            })
            .collect();
        let proj = |pb: &mut ParamBuilder, name: &str, out: usize| {
            Linear::new(pb, &format!("forgery.{name}"), c, out, true, Init::TruncNormal(0.02))
        };
        Self {
            config: config.clone(),
            backbone,
            branch1: Conv2d::new(pb, "forgery.branch1", cb, cbr, 1, 1),
            branch3: Conv2d::new(pb, "forgery.branch3", cb, cbr, 3, 1),
            branch5: Conv2d::new(pb, "forgery.branch5", cb, cbr, 5, 1),
            branch_pool: Conv2d::new(pb, "forgery.branch_pool", cb, cbr, 1, 1),
            wq: proj(pb, "attn.q", c),
            wk: proj(pb, "attn.k", c),
            wv: proj(pb, "attn.v", c),
            wo: proj(pb, "attn.out", c),
            fc: proj(pb, "fc", config.feature_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        let convs = self
            .backbone
            .iter()
            .chain([&self.branch1, &self.branch3, &self.branch5, &self.branch_pool])
            .flat_map(Conv2d::params);
        let linears = [&self.wq, &self.wk, &self.wv, &self.wo, &self.fc]
            .into_iter()
            .flat_map(Linear::params);
        convs.chain(linears).collect()
    }

    pub fn forward(&self, p: &ParamStore, spectrum: ArrayView3<'_, f64>) -> Result<(Array1<f64>, ForgeryTrace)> {
        if spectrum.dim() != (3, CROP_SIZE, CROP_SIZE) {
            return Err(Error::shape(format!(
                "forgery head expects a 3x{CROP_SIZE}x{CROP_SIZE} spectrum, got {:?}",
                spectrum.dim()
            )));
        }
        let input = standardize_channels(spectrum);
        let mut block_pre = Vec::with_capacity(self.backbone.len());
        let mut block_out: Vec<Array3<f64>> = Vec::with_capacity(self.backbone.len());
        for conv in &self.backbone {
            let x = block_out.last().map_or(input.view(), |a| a.view());
            let pre = conv.forward(p, x);
            block_out.push(silu(pre.view()));
            block_pre.push(pre);
        }
        let fb = block_out.last().expect("at least one block");
        let pooled = avg_pool(fb.view(), 3, 1, 1);
        let branch_pre = [
            self.branch1.forward(p, fb.view()),
            self.branch3.forward(p, fb.view()),
            self.branch5.forward(p, fb.view()),
            self.branch_pool.forward(p, pooled.view()),
        ];
        let acts: Vec<Array3<f64>> = branch_pre.iter().map(|b| silu(b.view())).collect();
        let views: Vec<_> = acts.iter().map(|a| a.view()).collect();
        let ms = concatenate(Axis(0), &views).expect("branches share spatial dims");
        let (c, h, w) = ms.dim();
        let z = ms
            .into_shape_with_order((c, h * w))
            .expect("flatten")
            .reversed_axes()
            .as_standard_layout()
            .into_owned();

        let q = self.wq.forward_rows(p, z.view());
        let k = self.wk.forward_rows(p, z.view());
        let v = self.wv.forward_rows(p, z.view());
        let heads_concat = attend(q.view(), k.view(), v.view(), self.config.heads, None);
        let out = self.wo.forward_rows(p, heads_concat.view());
        let gap = out.mean_axis(Axis(0)).expect("non-empty sequence");
        let feature = self.fc.forward(p, gap.view());
        Ok((
            feature,
            ForgeryTrace {
                input,
                block_pre,
                block_out,
                pooled,
                branch_pre,
                z,
                q,
                k,
                v,
                heads_concat,
                gap,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Gradients, t: &ForgeryTrace, d_feature: ArrayView1<'_, f64>) {
        let d_gap = self.fc.backward(p, g, t.gap.view(), d_feature);
        let l = t.z.nrows();
        let mut d_out = Array2::<f64>::zeros((l, d_gap.len()));
        d_out
            .rows_mut()
            .into_iter()
            .for_each(|mut r| r.assign(&(&d_gap / l as f64)));
        let d_concat = self.wo.backward_rows(p, g, t.heads_concat.view(), d_out.view());
        let (dq, dk, dv) = attend_backward(
            t.q.view(),
            t.k.view(),
            t.v.view(),
            self.config.heads,
            None,
            d_concat.view(),
        );
        let mut dz = self.wq.backward_rows(p, g, t.z.view(), dq.view());
        dz += &self.wk.backward_rows(p, g, t.z.view(), dk.view());
        dz += &self.wv.backward_rows(p, g, t.z.view(), dv.view());

        let fb = t.block_out.last().expect("at least one block");
        let (_, h, w) = fb.dim();
        let cbr = self.config.branch_channels;
        let d_ms = dz
            .reversed_axes()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((4 * cbr, h, w))
            .expect("unflatten");
        let mut d_fb = Array3::<f64>::zeros(fb.raw_dim());
        let convs = [&self.branch1, &self.branch3, &self.branch5, &self.branch_pool];
        for (i, conv) in convs.into_iter().enumerate() {
            let d_act = d_ms.slice(s![i * cbr..(i + 1) * cbr, .., ..]);
            let d_pre = silu_backward(t.branch_pre[i].view(), d_act);
            let input = if i == 3 { t.pooled.view() } else { fb.view() };
            let dx = conv.backward(p, g, input, d_pre.view(), true).expect("requested dx");
            if i == 3 {
                d_fb += &avg_pool_backward(fb.dim(), dx.view(), 3, 1, 1);
            } else {
                d_fb += &dx;
            }
        }

        let mut d_act = d_fb;
        for (i, conv) in self.backbone.iter().enumerate().rev() {
            let d_pre = silu_backward(t.block_pre[i].view(), d_act.view());
            let input = if i == 0 {
                t.input.view()
            } else {
                t.block_out[i - 1].view()
            };
            match conv.backward(p, g, input, d_pre.view(), i > 0) {
                Some(dx) => d_act = dx,
                None => break,
            }
        }
    }
}

/// Zero mean and unit variance per channel; a constant channel maps to zeros.
pub fn standardize_channels(x: ArrayView3<'_, f64>) -> Array3<f64> {
    let mut out = x.to_owned();
    for mut ch in out.outer_iter_mut() {
        let n = ch.len() as f64;
        let mean = ch.sum() / n;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        ch.mapv_inplace(|v| (v - mean) * scale);
    }
    out
}
