use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

/// Affine map `y = x W (+ b)` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize, bias: bool, init: Init) -> Self {
        let weight = pb.add(format!("{name}.weight"), &[in_dim, out_dim], init);
        let bias = bias.then(|| pb.add(format!("{name}.bias"), &[out_dim], Init::Zeros));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView1<'_, f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = x.dot(&p.mat(self.weight));
        if let Some(b) = self.bias {
            y += &p.vec(b);
        }
        y
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        x: ArrayView1<'_, f64>,
        dy: ArrayView1<'_, f64>,
    ) -> Array1<f64> {
        {
            let mut gw = g.mat_mut(self.weight);
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    gw.row_mut(i).scaled_add(xi, &dy);
                }
            }
        }
        if let Some(b) = self.bias {
            g.vec_mut(b).scaled_add(1.0, &dy);
        }
        p.mat(self.weight).dot(&dy)
    }

    pub fn forward_rows(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&p.mat(self.weight));
        if let Some(b) = self.bias {
            y += &p.vec(b);
        }
        y
    }

    pub fn backward_rows(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        g.mat_mut(self.weight).scaled_add(1.0, &x.t().dot(&dy));
        if let Some(b) = self.bias {
            g.vec_mut(b).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        }
        dy.dot(&p.mat(self.weight).t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use ndarray::{arr1, Array2};

    #[test]
    fn vector_and_row_paths_agree_with_fd() {
        let mut pb = ParamBuilder::new(3);
        let lin = Linear::new(&mut pb, "l", 3, 2, true, Init::TruncNormal(0.5));
        let mut store = pb.finish();
        store.randomize(9, 0.7);
        let x = arr1(&[0.3, -1.2, 0.8]);
        let dy = arr1(&[1.0, -2.0]);
        let mut g = Gradients::zeros_like(&store);
        let dx = lin.backward(&store, &mut g, x.view(), dy.view());

        let rows = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let drows = Array2::from_shape_vec((1, 2), dy.to_vec()).unwrap();
        let mut g2 = Gradients::zeros_like(&store);
        let dx2 = lin.backward_rows(&store, &mut g2, rows.view(), drows.view());
        assert_eq!(g, g2);
        assert!((&dx - &dx2.row(0)).iter().all(|d| d.abs() < 1e-15));

        let mut xs = x.to_vec();
        for i in 0..3 {
            let f = |v: &[f64]| lin.forward(&store, arr1(v).view()).dot(&dy);
            assert!(rel_err(dx[i], central_diff(&mut xs, i, 1e-6, &f)) < 1e-8);
        }
        let mut w = store.get(lin.weight).data.clone();
        for i in 0..w.len() {
            let f = |v: &[f64]| {
                let mut s = store.clone();
                s.get_mut(lin.weight).data.copy_from_slice(v);
                lin.forward(&s, x.view()).dot(&dy)
            };
            let fd = central_diff(&mut w, i, 1e-6, &f);
            assert!(rel_err(g.get(lin.weight)[i], fd) < 1e-8);
        }
    }
}
