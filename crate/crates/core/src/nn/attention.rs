//! Scaled dot-product multi-head attention over already-projected
//! queries, keys and values.
//!
//! Shapes: `q` is `[Lq, m]`, `k` and `v` are `[Lk, m]`; head `i` owns
//! columns `i·d_k .. (i+1)·d_k` with `d_k = m / heads`. Scores are scaled
//! by `1/√d_k`. Masked keys receive exactly zero weight, and a query row
//! with no visible key attends to nothing (all-zero weights and output).

use ndarray::{s, Array2, ArrayView2, Axis};

fn head_cols(m: usize, heads: usize, h: usize) -> std::ops::Range<usize> {
    let dk = m / heads;
    h * dk..(h + 1) * dk
}

/// Attention weights `[Lq, Lk]` of head `h`.
pub fn head_weights(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    heads: usize,
    h: usize,
    mask: Option<&[bool]>,
) -> Array2<f64> {
    let m = q.ncols();
    let cols = head_cols(m, heads, h);
    let scale = 1.0 / ((m / heads) as f64).sqrt();
    let qh = q.slice(s![.., cols.clone()]);
    let kh = k.slice(s![.., cols]);
    let mut scores = qh.dot(&kh.t());
    scores *= scale;
    let visible = |j: usize| mask.is_none_or(|mk| mk[j]);
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| visible(*j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut total = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if visible(j) {
                *v = (*v - max).exp();
                total += *v;
            } else {
                *v = 0.0;
            }
        }
        row /= total;
    }
    scores
}

/// Concatenated head outputs `[Lq, m]`.
pub fn attend(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    heads: usize,
    mask: Option<&[bool]>,
) -> Array2<f64> {
    let m = q.ncols();
    let mut out = Array2::<f64>::zeros((q.nrows(), m));
    for h in 0..heads {
        let cols = head_cols(m, heads, h);
        let a = head_weights(q, k, heads, h, mask);
        out.slice_mut(s![.., cols.clone()])
            .assign(&a.dot(&v.slice(s![.., cols])));
    }
    out
}

/// Gradients of [`attend`] with respect to `q`, `k` and `v`.
/// Weights are recomputed per head rather than cached.
pub fn attend_backward(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    heads: usize,
    mask: Option<&[bool]>,
    d_out: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let m = q.ncols();
    let scale = 1.0 / ((m / heads) as f64).sqrt();
    let mut dq = Array2::<f64>::zeros(q.raw_dim());
    let mut dk = Array2::<f64>::zeros(k.raw_dim());
    let mut dv = Array2::<f64>::zeros(v.raw_dim());
    for h in 0..heads {
        let cols = head_cols(m, heads, h);
        let a = head_weights(q, k, heads, h, mask);
        let doh = d_out.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        dv.slice_mut(s![.., cols.clone()]).assign(&a.t().dot(&doh));
        // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let da = doh.dot(&vh.t());
        let mut ds = &a * &da;
        let row_dot = ds.sum_axis(Axis(1));
        for (i, mut row) in ds.axis_iter_mut(Axis(0)).enumerate() {
            let ai = a.row(i);
            row.scaled_add(-row_dot[i], &ai);
        }
        ds *= scale;
        dq.slice_mut(s![.., cols.clone()])
            .assign(&ds.dot(&k.slice(s![.., cols.clone()])));
        dk.slice_mut(s![.., cols.clone()])
            .assign(&ds.t().dot(&q.slice(s![.., cols])));
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;

    fn pseudo(r: usize, c: usize, salt: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| {
            (((i * 13 + j * 7 + salt * 5) % 17) as f64 / 17.0 - 0.5) * 1.7
        })
    }

    #[test]
    fn rows_are_stochastic_and_mask_is_exact() {
        let q = pseudo(3, 8, 1);
        let k = pseudo(5, 8, 2);
        let mask = [true, false, true, true, false];
        for h in 0..2 {
            let a = head_weights(q.view(), k.view(), 2, h, Some(&mask));
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert_eq!(row[1], 0.0);
                assert_eq!(row[4], 0.0);
            }
        }
        let none = [false; 5];
        let a = head_weights(q.view(), k.view(), 2, 0, Some(&none));
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_matches_fd() {
        let q = pseudo(2, 6, 3);
        let k = pseudo(4, 6, 4);
        let v = pseudo(4, 6, 5);
        let d_out = pseudo(2, 6, 6);
        let mask = [true, true, false, true];
        let (dq, dk, dv) = attend_backward(q.view(), k.view(), v.view(), 3, Some(&mask), d_out.view());
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| {
            (attend(q.view(), k.view(), v.view(), 3, Some(&mask)) * &d_out).sum()
        };
        let check = |base: &Array2<f64>, grad: &Array2<f64>, which: usize| {
            let mut xs = base.iter().copied().collect::<Vec<_>>();
            for i in 0..xs.len() {
                let f = |vals: &[f64]| {
                    let x = Array2::from_shape_vec(base.raw_dim(), vals.to_vec()).unwrap();
                    match which {
                        0 => loss(&x, &k, &v),
                        1 => loss(&q, &x, &v),
                        _ => loss(&q, &k, &x),
                    }
                };
                let fd = central_diff(&mut xs, i, 1e-6, &f);
                assert!(rel_err(grad.as_slice().unwrap()[i], fd) < 1e-7);
            }
        };
        check(&q, &dq, 0);
        check(&k, &dk, 1);
        check(&v, &dv, 2);
        assert!(dk.row(2).iter().all(|&x| x == 0.0));
        assert!(dv.row(2).iter().all(|&x| x == 0.0));
    }
}
