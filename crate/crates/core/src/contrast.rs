//! Dual contrastive alignment: text against caption and text against image,
//! each scored by a one-directional InfoNCE over a batch similarity matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    pub tau: f64,
    pub lambda_tt: f64,
    pub lambda_ti: f64,
    pub contrast_dim: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda_tt: 0.5,
            lambda_ti: 0.5,
            contrast_dim: 128,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_tt >= 0.0 && self.lambda_ti >= 0.0) {
            return Err(Error::invalid("contrastive weights must be non-negative"));
        }
        if self.contrast_dim == 0 {
            return Err(Error::invalid("contrast_dim must be positive"));
        }
        Ok(())
    }
}

/// Linear map followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    lin: Linear,
}

impl ProjectionHead {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            lin: Linear::new(pb, name, in_dim, out_dim, true, Init::TruncNormal(0.02)),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lin.params()
    }

    /// Unit rows of the projected batch and the pre-normalization rows.
    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let raw = self.lin.forward_rows(p, x);
        let mut unit = raw.clone();
        for mut row in unit.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_EPS);
            row /= n;
        }
        (unit, raw)
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        x: ArrayView2<'_, f64>,
        raw: ArrayView2<'_, f64>,
        d_unit: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let mut d_raw = d_unit.to_owned();
        for (mut d, r) in d_raw.rows_mut().into_iter().zip(raw.rows()) {
            let n = r.dot(&r).sqrt();
            if n > NORM_EPS {
                let proj = r.dot(&d) / (n * n);
                d.scaled_add(-proj, &r);
                d /= n;
            } else {
                d /= NORM_EPS;
            }
        }
        self.lin.backward_rows(p, g, x, d_raw.view())
    }
}

/// `S[i][j] = u_i · v_j`.
pub fn similarity_matrix(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if u.ncols() != v.ncols() || u.nrows() != v.nrows() {
        return Err(Error::shape(format!(
            "similarity needs equal shapes, got {:?} and {:?}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(u.dot(&v.t()))
}

/// Mean over rows of `−log softmax(S_i/τ)_i`.
pub fn info_nce(s: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(s, tau)?.0)
}

/// Loss and its gradient with respect to `S`.
pub fn info_nce_with_grad(s: ArrayView2<'_, f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    let n = s.nrows();
    if n != s.ncols() || n == 0 {
        return Err(Error::shape(format!(
            "InfoNCE needs a non-empty square matrix, got {:?}",
            s.dim()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut grad = Array2::zeros((n, n));
    let mut total = 0.0;
    for (i, row) in s.axis_iter(Axis(0)).enumerate() {
        let scaled = row.mapv(|v| v / tau);
        let max = scaled.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps = scaled.mapv(|v| (v - max).exp());
        let z = exps.sum();
        total += max + z.ln() - scaled[i];
        let mut gr = grad.row_mut(i);
        gr.assign(&(exps / z));
        gr[i] -= 1.0;
    }
    grad /= n as f64 * tau;
    Ok(((total / n as f64).max(0.0), grad))
}

/// Loss values of one batch and gradients for the raw feature rows.
#[derive(Debug, Clone)]
pub struct ContrastOutput {
    pub l_sim: f64,
    pub l_tt: f64,
    pub l_ti: f64,
    pub d_text: Array2<f64>,
    pub d_caption: Array2<f64>,
    pub d_image: Array2<f64>,
}

/// Projection heads plus loss weights. A head is absent when no enabled
/// term needs it.
#[derive(Debug, Clone)]
pub struct DualContrast {
    pub cfg: ContrastConfig,
    text: Option<ProjectionHead>,
    caption: Option<ProjectionHead>,
    image: Option<ProjectionHead>,
}

impl DualContrast {
    pub fn new(pb: &mut ParamBuilder, cfg: ContrastConfig, text_dim: usize, image_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.contrast_dim;
        let tt = cfg.lambda_tt > 0.0;
        let ti = cfg.lambda_ti > 0.0;
        Ok(Self {
            cfg,
            text: (tt || ti).then(|| ProjectionHead::new(pb, "contrast.text", text_dim, d)),
            caption: tt.then(|| ProjectionHead::new(pb, "contrast.caption", text_dim, d)),
            image: ti.then(|| ProjectionHead::new(pb, "contrast.image", image_dim, d)),
        })
    }

    pub fn is_active(&self) -> bool {
        self.text.is_some()
    }

    /// Whether the text/caption term is enabled.
    pub fn uses_captions(&self) -> bool {
        self.caption.is_some()
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.text, &self.caption, &self.image]
            .into_iter()
            .flatten()
            .flat_map(ProjectionHead::params)
            .collect()
    }

    /// `text` and `image` hold one row per sample; `caption` rows count only
    /// where `caption_valid` is true. Gradients go to `g` when given.
    pub fn loss(
        &self,
        p: &ParamStore,
        mut g: Option<&mut Gradients>,
        text: ArrayView2<'_, f64>,
        caption: ArrayView2<'_, f64>,
        caption_valid: &[bool],
        image: ArrayView2<'_, f64>,
    ) -> Result<ContrastOutput> {
        let n = text.nrows();
        if caption.nrows() != n || image.nrows() != n || caption_valid.len() != n {
            return Err(Error::shape("contrastive batch rows disagree"));
        }
        let mut out = ContrastOutput {
            l_sim: 0.0,
            l_tt: 0.0,
            l_ti: 0.0,
            d_text: Array2::zeros(text.raw_dim()),
            d_caption: Array2::zeros(caption.raw_dim()),
            d_image: Array2::zeros(image.raw_dim()),
        };
        let Some(text_head) = &self.text else {
            return Ok(out);
        };
        let (u, u_raw) = text_head.forward(p, text);
        let mut d_u = Array2::<f64>::zeros(u.raw_dim());

        if let Some(head) = &self.image {
            let (v, v_raw) = head.forward(p, image);
            let (l, ds) = info_nce_with_grad(similarity_matrix(u.view(), v.view())?.view(), self.cfg.tau)?;
            out.l_ti = l;
            let ds = ds * self.cfg.lambda_ti;
            d_u += &ds.dot(&v);
            if let Some(g) = g.as_deref_mut() {
                out.d_image = head.backward(p, g, image, v_raw.view(), ds.t().dot(&u).view());
            }
        }

        if let Some(head) = &self.caption {
            let rows: Vec<usize> = (0..n).filter(|&i| caption_valid[i]).collect();
            if rows.len() > 1 {
                let c_in = caption.select(Axis(0), &rows);
                let (w, w_raw) = head.forward(p, c_in.view());
                let u_sub = u.select(Axis(0), &rows);
                let (l, ds) = info_nce_with_grad(similarity_matrix(u_sub.view(), w.view())?.view(), self.cfg.tau)?;
                out.l_tt = l;
                let ds = ds * self.cfg.lambda_tt;
                let d_u_sub = ds.dot(&w);
                for (k, &i) in rows.iter().enumerate() {
                    let mut r = d_u.row_mut(i);
                    r += &d_u_sub.row(k);
                }
                if let Some(g) = g.as_deref_mut() {
                    let d_c = head.backward(p, g, c_in.view(), w_raw.view(), ds.t().dot(&u_sub).view());
                    for (k, &i) in rows.iter().enumerate() {
                        out.d_caption.row_mut(i).assign(&d_c.row(k));
                    }
                }
            }
        }

        out.l_sim = self.cfg.lambda_tt * out.l_tt + self.cfg.lambda_ti * out.l_ti;
        if let Some(g) = g {
            out.d_text = text_head.backward(p, g, text, u_raw.view(), d_u.view());
        }
        Ok(out)
    }
}

/// Stacks equal-length vectors as matrix rows.
pub fn stack_rows(rows: &[ArrayView1<'_, f64>], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

/// Unit-normalizes a single vector the way projection heads do.
pub fn l2_normalize(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = x.dot(&x).sqrt().max(NORM_EPS);
    x.mapv(|v| v / n)
}
