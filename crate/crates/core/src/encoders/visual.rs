//! Toy image encoder: fixed 8×8 block averaging to a 32×32 thumbnail,
//! three conv layers, global average pooling and a linear head.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3};

use crate::error::{Error, Result};
use crate::image::{Image, IMAGE_SIZE};
use crate::nn::act::{silu, silu_backward};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Conv2d, Linear};
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

/// Side of the block-averaged thumbnail the convolutions see.
pub const THUMBNAIL_SIZE: usize = 32;

/// Fixed (parameter-free) preprocessing shared by training and inference.
pub fn thumbnail(image: &Image) -> Result<Array3<f64>> {
    image.ensure_size(IMAGE_SIZE)?;
    Ok(image.block_mean(IMAGE_SIZE / THUMBNAIL_SIZE))
}

#[derive(Debug, Clone)]
pub struct ToyImageEncoder {
    pub dim: usize,
    convs: [Conv2d; 3],
    fc: Linear,
}

#[derive(Debug, Clone)]
pub struct ImageTrace {
    pre: [Array3<f64>; 3],
    act: [Array3<f64>; 3],
    gap: Array1<f64>,
}

impl ToyImageEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: [usize; 3], dim: usize) -> Self {
        let convs = [
            Conv2d::new(pb, &format!("{name}.conv0"), 3, channels[0], 3, 1),
            Conv2d::new(pb, &format!("{name}.conv1"), channels[0], channels[1], 3, 2),
            Conv2d::new(pb, &format!("{name}.conv2"), channels[1], channels[2], 3, 2),
        ];
        let fc = Linear::new(
            pb,
            &format!("{name}.fc"),
            channels[2],
            dim,
            true,
            Init::FanIn(channels[2]),
        );
        Self { dim, convs, fc }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.convs
            .iter()
            .flat_map(Conv2d::params)
            .chain(self.fc.params())
            .collect()
    }

    pub fn encode(&self, p: &ParamStore, image: &Image) -> Result<Array1<f64>> {
        Ok(self.forward(p, thumbnail(image)?.view())?.0)
    }

    pub fn forward(&self, p: &ParamStore, thumb: ArrayView3<'_, f64>) -> Result<(Array1<f64>, ImageTrace)> {
        if thumb.dim() != (3, THUMBNAIL_SIZE, THUMBNAIL_SIZE) {
            return Err(Error::shape(format!(
                "expected a 3x32x32 thumbnail, got {:?}",
                thumb.dim()
            )));
        }
        let pre0 = self.convs[0].forward(p, thumb);
        let act0 = silu(pre0.view());
        let pre1 = self.convs[1].forward(p, act0.view());
        let act1 = silu(pre1.view());
        let pre2 = self.convs[2].forward(p, act1.view());
        let act2 = silu(pre2.view());
        let gap = global_avg_pool(act2.view());
        let out = self.fc.forward(p, gap.view());
        Ok((
            out,
            ImageTrace {
                pre: [pre0, pre1, pre2],
                act: [act0, act1, act2],
                gap,
            },
        ))
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        thumb: ArrayView3<'_, f64>,
        t: &ImageTrace,
        d_out: ArrayView1<'_, f64>,
    ) {
        let d_gap = self.fc.backward(p, g, t.gap.view(), d_out);
        let mut d_act = global_avg_pool_backward(t.act[2].dim(), d_gap.view());
        for i in (0..3).rev() {
            let d_pre = silu_backward(t.pre[i].view(), d_act.view());
            let input = if i == 0 { thumb } else { t.act[i - 1].view() };
            match self.convs[i].backward(p, g, input, d_pre.view(), i > 0) {
                Some(dx) => d_act = dx,
                None => break,
            }
        }
    }
}
