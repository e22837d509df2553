//! Elementwise nonlinearities. Backward functions take the pre-activation.

use ndarray::{Array, ArrayView, Dimension, Zip};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu<D: Dimension>(x: ArrayView<'_, f64, D>) -> Array<f64, D> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward<D: Dimension>(pre: ArrayView<'_, f64, D>, dy: ArrayView<'_, f64, D>) -> Array<f64, D> {
    Zip::from(&pre).and(&dy).map_collect(|&x, &g| {
        let s = sigmoid(x);
        g * (s + x * s * (1.0 - s))
    })
}

pub fn tanh<D: Dimension>(x: ArrayView<'_, f64, D>) -> Array<f64, D> {
    x.mapv(f64::tanh)
}

/// Backward of tanh given its *output*.
pub fn tanh_backward<D: Dimension>(out: ArrayView<'_, f64, D>, dy: ArrayView<'_, f64, D>) -> Array<f64, D> {
    Zip::from(&out).and(&dy).map_collect(|&y, &g| g * (1.0 - y * y))
}

pub fn leaky_relu<D: Dimension>(x: ArrayView<'_, f64, D>, slope: f64) -> Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward<D: Dimension>(
    pre: ArrayView<'_, f64, D>,
    dy: ArrayView<'_, f64, D>,
    slope: f64,
) -> Array<f64, D> {
    Zip::from(&pre)
        .and(&dy)
        .map_collect(|&x, &g| if x > 0.0 { g } else { slope * g })
}
