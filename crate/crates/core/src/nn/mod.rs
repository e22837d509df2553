//! Differentiable building blocks with explicit forward/backward passes.
//!
//! Every backward function accumulates parameter gradients into a
//! [`Gradients`](crate::params::Gradients) buffer and returns the gradient
//! with respect to its input. Callers keep whatever forward state the
//! backward pass needs.

pub mod act;
pub mod attention;
pub mod conv;
pub mod linear;

pub use attention::{attend, attend_backward, head_weights};
pub use conv::{avg_pool, avg_pool_backward, global_avg_pool, global_avg_pool_backward, Conv2d};
pub use linear::Linear;

#[cfg(test)]
pub(crate) mod testutil {
    /// Central finite difference of `f` at `x` along coordinate `i`.
    pub fn central_diff(x: &mut [f64], i: usize, eps: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(x);
        x[i] = orig - eps;
        let minus = f(x);
        x[i] = orig;
        (plus - minus) / (2.0 * eps)
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-8 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }
}
