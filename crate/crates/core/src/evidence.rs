//! Cross-attention of a post feature (query) over its retrieved evidence
//! (keys and values).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{attend, attend_backward, head_weights, Linear};
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct CrossAttentionBlock {
    pub heads: usize,
    pub query_dim: usize,
    pub kv_dim: usize,
    pub model_dim: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

/// Intermediates of one [`CrossAttentionBlock::forward`] call.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    mask: Vec<bool>,
    concat: Array1<f64>,
    has_evidence: bool,
}

impl AttentionTrace {
    /// False when every evidence row was masked.
    pub fn has_evidence(&self) -> bool {
        self.has_evidence
    }

    /// Concatenated head outputs before the output projection.
    pub fn heads_output(&self) -> ArrayView1<'_, f64> {
        self.concat.view()
    }

    /// Attention weights of head `h` over the evidence rows.
    pub fn weights(&self, heads: usize, h: usize) -> Array1<f64> {
        head_weights(self.q.view(), self.k.view(), heads, h, Some(&self.mask))
            .row(0)
            .to_owned()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.v.view()
    }
}

impl CrossAttentionBlock {
    /// `model_dim` equal to `query_dim` keeps the output gateable against
    /// the query without another projection.
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        model_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "attention width {model_dim} is not divisible by {heads} heads"
            )));
        }
        let init = Init::TruncNormal(0.02);
        Ok(Self {
            heads,
            query_dim,
            kv_dim,
            model_dim,
            q: Linear::new(pb, &format!("{name}.query"), query_dim, model_dim, true, init),
            k: Linear::new(pb, &format!("{name}.key"), kv_dim, model_dim, true, init),
            v: Linear::new(pb, &format!("{name}.value"), kv_dim, model_dim, true, init),
            out: Linear::new(pb, &format!("{name}.out"), model_dim, model_dim, true, init),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out]
            .into_iter()
            .flat_map(Linear::params)
            .collect()
    }

    /// Returns the enhanced feature, or zeros when no evidence row is valid.
    pub fn forward(
        &self,
        p: &ParamStore,
        query: ArrayView1<'_, f64>,
        evidence: ArrayView2<'_, f64>,
        mask: &[bool],
    ) -> Result<(Array1<f64>, AttentionTrace)> {
        if query.len() != self.query_dim || evidence.ncols() != self.kv_dim || mask.len() != evidence.nrows() {
            return Err(Error::shape(format!(
                "cross-attention expects query {} and evidence [K, {}] with K mask entries; got query {}, evidence {:?}, mask {}",
                self.query_dim,
                self.kv_dim,
                query.len(),
                evidence.dim(),
                mask.len()
            )));
        }
        let q = self.q.forward(p, query).insert_axis(Axis(0));
        let k = self.k.forward_rows(p, evidence);
        let v = self.v.forward_rows(p, evidence);
        let has_evidence = mask.iter().any(|&m| m);
        let concat = attend(q.view(), k.view(), v.view(), self.heads, Some(mask))
            .row(0)
            .to_owned();
        let out = if has_evidence {
            self.out.forward(p, concat.view())
        } else {
            Array1::zeros(self.model_dim)
        };
        Ok((
            out,
            AttentionTrace {
                q,
                k,
                v,
                mask: mask.to_vec(),
                concat,
                has_evidence,
            },
        ))
    }

    /// Returns gradients for the query and the evidence matrix.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        query: ArrayView1<'_, f64>,
        evidence: ArrayView2<'_, f64>,
        t: &AttentionTrace,
        d_out: ArrayView1<'_, f64>,
    ) -> (Array1<f64>, Array2<f64>) {
        if !t.has_evidence {
            return (Array1::zeros(self.query_dim), Array2::zeros(evidence.raw_dim()));
        }
        let d_concat = self.out.backward(p, g, t.concat.view(), d_out);
        let (dq, dk, dv) = attend_backward(
            t.q.view(),
            t.k.view(),
            t.v.view(),
            self.heads,
            Some(&t.mask),
            d_concat.insert_axis(Axis(0)).view(),
        );
        let d_query = self.q.backward(p, g, query, dq.row(0));
        let mut d_evidence = self.k.backward_rows(p, g, evidence, dk.view());
        d_evidence += &self.v.backward_rows(p, g, evidence, dv.view());
        (d_query, d_evidence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::rel_err;
    use ndarray::{concatenate, s};

    fn block(heads: usize, qd: usize, kd: usize, m: usize) -> (CrossAttentionBlock, ParamStore) {
        let mut pb = ParamBuilder::new(17);
        let b = CrossAttentionBlock::new(&mut pb, "att", qd, kd, m, heads).unwrap();
        let mut store = pb.finish();
        store.randomize(5, 0.4);
        (b, store)
    }

    fn data(r: usize, c: usize, salt: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.61 + salt).sin())
    }

    /// Independent evaluation with explicit loops.
    fn oracle(b: &CrossAttentionBlock, p: &ParamStore, q: &[f64], e: &Array2<f64>, mask: &[bool]) -> Vec<f64> {
        let w = |n: &str| p.mat(p.find(n).unwrap()).to_owned();
        let bias = |n: &str| p.vec(p.find(n).unwrap()).to_owned();
        let affine = |x: &[f64], name: &str| -> Vec<f64> {
            let (wm, bv) = (w(&format!("att.{name}.weight")), bias(&format!("att.{name}.bias")));
            (0..wm.ncols())
                .map(|o| bv[o] + (0..x.len()).map(|i| x[i] * wm[[i, o]]).sum::<f64>())
                .collect()
        };
        let qv = affine(q, "query");
        let ks: Vec<Vec<f64>> = e
            .rows()
            .into_iter()
            .map(|r| affine(r.as_slice().unwrap(), "key"))
            .collect();
        let vs: Vec<Vec<f64>> = e
            .rows()
            .into_iter()
            .map(|r| affine(r.as_slice().unwrap(), "value"))
            .collect();
        let dk = b.model_dim / b.heads;
        let mut concat = vec![0.0; b.model_dim];
        for h in 0..b.heads {
            let idx: Vec<usize> = (0..e.nrows()).filter(|&j| mask[j]).collect();
            let scores: Vec<f64> = idx
                .iter()
                .map(|&j| (0..dk).map(|c| qv[h * dk + c] * ks[j][h * dk + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for (n, &j) in idx.iter().enumerate() {
                for c in 0..dk {
                    concat[h * dk + c] += scores[n].exp() / z * vs[j][h * dk + c];
                }
            }
        }
        affine(&concat, "out")
    }

    #[test]
    fn matches_direct_formula() {
        let (b, p) = block(2, 5, 3, 4);
        let q = [0.3, -0.7, 1.1, 0.2, -0.4];
        let e = data(3, 3, 0.2);
        for mask in [[true, true, true], [true, false, true]] {
            let (out, _) = b.forward(&p, ndarray::aview1(&q), e.view(), &mask).unwrap();
            let want = oracle(&b, &p, &q, &e, &mask);
            for (a, w) in out.iter().zip(&want) {
                assert!((a - w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singleton_returns_projected_value() {
        let (b, p) = block(4, 8, 6, 8);
        let q = Array1::from_shape_fn(8, |i| i as f64 * 0.1);
        let e = data(4, 6, 1.0);
        let (out, _) = b.forward(&p, q.view(), e.view(), &[false, false, true, false]).unwrap();
        let want = b.out.forward(&p, b.v.forward(&p, e.row(2)).view());
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn permutation_and_padding_invariance() {
        let (b, p) = block(2, 6, 6, 6);
        let q = Array1::from_shape_fn(6, |i| (i as f64).cos());
        let e = data(4, 6, 0.5);
        let mask = [true, true, false, true];
        let (base, _) = b.forward(&p, q.view(), e.view(), &mask).unwrap();

        let order = [3, 0, 2, 1];
        let permuted = e.select(Axis(0), &order);
        let pmask: Vec<bool> = order.iter().map(|&i| mask[i]).collect();
        let (out, _) = b.forward(&p, q.view(), permuted.view(), &pmask).unwrap();
        assert!((&out - &base).iter().all(|d| d.abs() < 1e-6));

        let padded = concatenate![Axis(0), e, data(3, 6, 9.0)];
        let pad_mask: Vec<bool> = mask.iter().copied().chain([false; 3]).collect();
        let (out, _) = b.forward(&p, q.view(), padded.view(), &pad_mask).unwrap();
        assert!((&out - &base).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn heads_stay_in_value_hull_with_stochastic_weights() {
        let (b, p) = block(4, 8, 5, 8);
        let q = Array1::from_shape_fn(8, |i| 1.0 - i as f64 * 0.3);
        let e = data(5, 5, 2.0);
        let mask = [true, false, true, true, true];
        let (_, t) = b.forward(&p, q.view(), e.view(), &mask).unwrap();
        let dk = 2;
        for h in 0..4 {
            let w = t.weights(4, h);
            assert!((w.sum() - 1.0).abs() < 1e-6);
            assert_eq!(w[1], 0.0);
            for c in h * dk..(h + 1) * dk {
                let vals: Vec<f64> = (0..5).filter(|&j| mask[j]).map(|j| t.values()[[j, c]]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let x = t.heads_output()[c];
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                let recombined: f64 = (0..5).map(|j| w[j] * t.values()[[j, c]]).sum();
                assert!((x - recombined).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_masked_and_bad_shapes() {
        let (b, p) = block(2, 4, 4, 4);
        let q = Array1::ones(4);
        let e = data(3, 4, 0.0);
        let (out, t) = b.forward(&p, q.view(), e.view(), &[false; 3]).unwrap();
        assert!(!t.has_evidence() && out.iter().all(|&v| v == 0.0));
        assert!(b.forward(&p, q.view(), e.slice(s![.., ..3]), &[true; 3]).is_err());
        assert!(b.forward(&p, q.view(), e.view(), &[true; 2]).is_err());
        assert!(CrossAttentionBlock::new(&mut ParamBuilder::new(0), "x", 4, 4, 6, 4).is_err());
    }

    #[test]
    fn gradients_match_fd() {
        let (b, p) = block(2, 4, 3, 4);
        let q = Array1::from_vec(vec![0.5, -0.2, 0.9, 0.1]);
        let e = data(3, 3, 0.7);
        let mask = [true, true, false];
        let w = Array1::from_vec(vec![1.0, -2.0, 0.5, 1.5]);
        let loss = |p: &ParamStore, q: &Array1<f64>, e: &Array2<f64>| {
            b.forward(p, q.view(), e.view(), &mask).unwrap().0.dot(&w)
        };
        let (_, t) = b.forward(&p, q.view(), e.view(), &mask).unwrap();
        let mut g = Gradients::zeros_like(&p);
        let (dq, de) = b.backward(&p, &mut g, q.view(), e.view(), &t, w.view());
        let eps = 1e-6;
        for id in b.params() {
            for j in 0..p.get(id).len() {
                let mut s = p.clone();
                s.get_mut(id).data[j] += eps;
                let plus = loss(&s, &q, &e);
                s.get_mut(id).data[j] -= 2.0 * eps;
                let fd = (plus - loss(&s, &q, &e)) / (2.0 * eps);
                assert!(rel_err(g.get(id)[j], fd) < 1e-5, "{} {j}", p.get(id).name);
            }
        }
        for i in 0..4 {
            let mut qq = q.clone();
            qq[i] += eps;
            let plus = loss(&p, &qq, &e);
            qq[i] -= 2.0 * eps;
            assert!(rel_err(dq[i], (plus - loss(&p, &qq, &e)) / (2.0 * eps)) < 1e-5);
        }
        for (r, c) in [(0, 0), (1, 2), (2, 1)] {
            let mut ee = e.clone();
            ee[[r, c]] += eps;
            let plus = loss(&p, &q, &ee);
            ee[[r, c]] -= 2.0 * eps;
            assert!(rel_err(de[[r, c]], (plus - loss(&p, &q, &ee)) / (2.0 * eps)) < 1e-5);
        }
        assert!(de.row(2).iter().all(|&v| v == 0.0));
    }
}
