//! 2-D convolution (im2col + GEMM) and average pooling over `C×H×W` maps.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfolds `x` into `[C·k·k, Ho·Wo]` patches.
fn im2col(x: ArrayView3<'_, f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: ArrayView2<'_, f64>, dims: (usize, usize, usize), k: usize, stride: usize, pad: usize) -> Array3<f64> {
    let (c, h, w) = dims;
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut x = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let src = cols.row((ci * k + ky) * k + kx);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[[ci, iy as usize, ix as usize]] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square kernel with "same"-style padding `kernel / 2`.
    pub fn new(pb: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = pb.add(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::FanIn(fan_in),
        );
        let bias = pb.add(format!("{name}.bias"), &[out_ch], Init::Zeros);
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_size(h, self.kernel, self.stride, self.pad),
            out_size(w, self.kernel, self.stride, self.pad),
        )
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let (ho, wo) = self.output_dims(h, w);
        let cols = im2col(x, self.kernel, self.stride, self.pad);
        let mut y = p.mat(self.weight).dot(&cols);
        let b = p.vec(self.bias);
        for (mut row, &bi) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row += bi;
        }
        y.into_shape_with_order((self.out_ch, ho, wo))
            .expect("conv output shape")
    }

    /// Accumulates weight/bias gradients; returns `dx` only when asked.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        x: ArrayView3<'_, f64>,
        dy: ArrayView3<'_, f64>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let (_, ho, wo) = dy.dim();
        let dy2 = dy.to_shape((self.out_ch, ho * wo)).expect("conv grad shape");
        let cols = im2col(x, self.kernel, self.stride, self.pad);
        g.mat_mut(self.weight).scaled_add(1.0, &dy2.dot(&cols.t()));
        g.vec_mut(self.bias).scaled_add(1.0, &dy2.sum_axis(Axis(1)));
        need_dx.then(|| {
            let dcols = p.mat(self.weight).t().dot(&dy2);
            col2im(dcols.view(), x.dim(), self.kernel, self.stride, self.pad)
        })
    }
}

/// Average pooling with zero padding counted in the divisor (`k²`).
pub fn avg_pool(x: ArrayView3<'_, f64>, k: usize, stride: usize, pad: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let inv = 1.0 / (k * k) as f64;
    let mut y = Array3::<f64>::zeros((c, ho, wo));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            s += x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
                y[[ci, oy, ox]] = s * inv;
            }
        }
    }
    y
}

pub fn avg_pool_backward(
    dims: (usize, usize, usize),
    dy: ArrayView3<'_, f64>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (c, h, w) = dims;
    let (_, ho, wo) = dy.dim();
    let inv = 1.0 / (k * k) as f64;
    let mut dx = Array3::<f64>::zeros(dims);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = dy[[ci, oy, ox]] * inv;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[[ci, iy as usize, ix as usize]] += gv;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the spatial axes of a `C×H×W` map.
pub fn global_avg_pool(x: ArrayView3<'_, f64>) -> Array1<f64> {
    let (c, h, w) = x.dim();
    let flat = x.to_shape((c, h * w)).expect("gap shape");
    flat.mean_axis(Axis(1)).expect("non-empty map")
}

pub fn global_avg_pool_backward(dims: (usize, usize, usize), dy: ArrayView1<'_, f64>) -> Array3<f64> {
    let (c, h, w) = dims;
    let inv = 1.0 / (h * w) as f64;
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for (ci, mut plane) in dx.axis_iter_mut(Axis(0)).enumerate() {
        plane.fill(dy[ci] * inv);
    }
    dx
}
