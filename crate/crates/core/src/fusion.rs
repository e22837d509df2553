//! Gated fusion: post vs evidence-enhanced features per modality, text vs
//! image, the fused feature vs the forgery feature, then a learned global
//! scale in (0, 1).

use ndarray::{concatenate, s, Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::nn::act::sigmoid;
use crate::nn::Linear;
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

/// Scalar sigmoid gate over `[a; b]` blending `g·a + (1−g)·b`.
#[derive(Debug, Clone)]
pub struct GateUnit {
    lin: Linear,
    pub dim: usize,
    /// When false the logit is pinned to 0 and the weights get no gradient.
    pub learned: bool,
}

#[derive(Debug, Clone)]
pub struct GateTrace {
    a: Array1<f64>,
    b: Array1<f64>,
    gate: f64,
}

impl GateTrace {
    pub fn value(&self) -> f64 {
        self.gate
    }
}

impl GateUnit {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, learned: bool) -> Self {
        let lin = Linear::new(pb, name, 2 * dim, 1, true, Init::Zeros);
        if !learned {
            lin.params().into_iter().for_each(|id| pb.freeze(id));
        }
        Self { lin, dim, learned }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lin.params()
    }

    pub fn logit(&self, p: &ParamStore, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        if !self.learned {
            return 0.0;
        }
        self.lin.forward(p, concatenate![Axis(0), a, b].view())[0]
    }

    pub fn blend(
        &self,
        p: &ParamStore,
        a: ArrayView1<'_, f64>,
        b: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, GateTrace)> {
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::shape(format!(
                "gate expects two length-{} inputs, got {} and {}",
                self.dim,
                a.len(),
                b.len()
            )));
        }
        let gate = sigmoid(self.logit(p, a, b));
        let out = &a * gate + &b * (1.0 - gate);
        Ok((
            out,
            GateTrace {
                a: a.to_owned(),
                b: b.to_owned(),
                gate,
            },
        ))
    }

    /// Gradients for both inputs.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        t: &GateTrace,
        d_out: ArrayView1<'_, f64>,
    ) -> (Array1<f64>, Array1<f64>) {
        let mut da = &d_out * t.gate;
        let mut db = &d_out * (1.0 - t.gate);
        if self.learned {
            let d_logit = d_out.dot(&(&t.a - &t.b)) * t.gate * (1.0 - t.gate);
            let x = concatenate![Axis(0), t.a, t.b];
            let dx = self.lin.backward(p, g, x.view(), ndarray::aview1(&[d_logit]));
            da += &dx.slice(s![..self.dim]);
            db += &dx.slice(s![self.dim..]);
        }
        (da, db)
    }
}

/// Effective scale `σ(θ)`.
#[derive(Debug, Clone)]
pub struct AdaptiveScale {
    theta: ParamId,
}

impl AdaptiveScale {
    pub fn new(pb: &mut ParamBuilder, name: &str, theta_init: f64) -> Self {
        Self {
            theta: pb.add(name, &[1], Init::Const(theta_init)),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.theta]
    }

    pub fn value(&self, p: &ParamStore) -> f64 {
        sigmoid(p.scalar(self.theta))
    }

    pub fn forward(&self, p: &ParamStore, h: ArrayView1<'_, f64>) -> Array1<f64> {
        &h * self.value(p)
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        h: ArrayView1<'_, f64>,
        d_out: ArrayView1<'_, f64>,
    ) -> Array1<f64> {
        let lambda = self.value(p);
        g.add_scalar(self.theta, lambda * (1.0 - lambda) * d_out.dot(&h));
        &d_out * lambda
    }
}

/// Which fusion stages exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionLayout {
    pub text_dim: usize,
    pub image_dim: usize,
    /// Forgery feature width, or `None` without the forgery branch.
    pub forgery_dim: Option<usize>,
    pub fusion_dim: usize,
    pub evidence_gates: bool,
    pub learned_gates: bool,
    pub scaling: bool,
    pub scale_init_theta: f64,
}

#[derive(Debug, Clone)]
pub struct Fusion {
    text_gate: Option<GateUnit>,
    image_gate: Option<GateUnit>,
    text_proj: Linear,
    image_proj: Linear,
    cross_gate: GateUnit,
    forgery: Option<(Linear, GateUnit)>,
    scale: Option<AdaptiveScale>,
    pub fusion_dim: usize,
}

/// Per-sample fusion inputs; enhanced features are `None` when evidence
/// fusion is disabled.
#[derive(Debug, Clone, Copy)]
pub struct FusionInput<'a> {
    pub text: ArrayView1<'a, f64>,
    pub text_enhanced: Option<ArrayView1<'a, f64>>,
    pub image: ArrayView1<'a, f64>,
    pub image_enhanced: Option<ArrayView1<'a, f64>>,
    pub forgery: Option<ArrayView1<'a, f64>>,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    text_gate: Option<GateTrace>,
    image_gate: Option<GateTrace>,
    text_fused: Array1<f64>,
    image_fused: Array1<f64>,
    cross: GateTrace,
    forgery_in: Option<Array1<f64>>,
    forgery_gate: Option<GateTrace>,
    pre_scale: Array1<f64>,
    scale: f64,
}

/// Gate values of one sample; absent stages read as `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateValues {
    pub text_evidence: Option<f64>,
    pub image_evidence: Option<f64>,
    pub cross_modal: f64,
    pub forgery: Option<f64>,
    pub scale: f64,
}

impl FusionTrace {
    pub fn gates(&self) -> GateValues {
        GateValues {
            text_evidence: self.text_gate.as_ref().map(GateTrace::value),
            image_evidence: self.image_gate.as_ref().map(GateTrace::value),
            cross_modal: self.cross.value(),
            forgery: self.forgery_gate.as_ref().map(GateTrace::value),
            scale: self.scale,
        }
    }

    pub fn pre_scale(&self) -> ArrayView1<'_, f64> {
        self.pre_scale.view()
    }
}

/// Gradients for each fusion input.
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub text: Array1<f64>,
    pub text_enhanced: Option<Array1<f64>>,
    pub image: Array1<f64>,
    pub image_enhanced: Option<Array1<f64>>,
    pub forgery: Option<Array1<f64>>,
}

impl Fusion {
    pub fn new(pb: &mut ParamBuilder, l: &FusionLayout) -> Self {
        let init = Init::TruncNormal(0.02);
        let learned = l.learned_gates;
        Self {
            text_gate: l
                .evidence_gates
                .then(|| GateUnit::new(pb, "fusion.text_gate", l.text_dim, learned)),
            image_gate: l
                .evidence_gates
                .then(|| GateUnit::new(pb, "fusion.image_gate", l.image_dim, learned)),
            text_proj: Linear::new(pb, "fusion.text_proj", l.text_dim, l.fusion_dim, false, init),
            image_proj: Linear::new(pb, "fusion.image_proj", l.image_dim, l.fusion_dim, false, init),
            cross_gate: GateUnit::new(pb, "fusion.cross_gate", l.fusion_dim, learned),
            forgery: l.forgery_dim.map(|f| {
                (
                    Linear::new(pb, "fusion.forgery_proj", f, l.fusion_dim, false, init),
                    GateUnit::new(pb, "fusion.forgery_gate", l.fusion_dim, learned),
                )
            }),
            scale: l
                .scaling
                .then(|| AdaptiveScale::new(pb, "fusion.scale", l.scale_init_theta)),
            fusion_dim: l.fusion_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for gate in [&self.text_gate, &self.image_gate].into_iter().flatten() {
            v.extend(gate.params());
        }
        v.extend(self.text_proj.params());
        v.extend(self.image_proj.params());
        v.extend(self.cross_gate.params());
        if let Some((proj, gate)) = &self.forgery {
            v.extend(proj.params());
            v.extend(gate.params());
        }
        if let Some(s) = &self.scale {
            v.extend(s.params());
        }
        v
    }

    pub fn forward(&self, p: &ParamStore, x: FusionInput<'_>) -> Result<(Array1<f64>, FusionTrace)> {
        let intra =
            |gate: &Option<GateUnit>, h: ArrayView1<'_, f64>, enhanced: Option<ArrayView1<'_, f64>>| -> Result<_> {
                match (gate, enhanced) {
                    (Some(gate), Some(e)) => {
                        let (out, t) = gate.blend(p, h, e)?;
                        Ok((out, Some(t)))
                    }
                    (None, None) => Ok((h.to_owned(), None)),
                    _ => Err(Error::invalid(
                        "evidence features and evidence gates must both be present or both absent",
                    )),
                }
            };
        let (text_fused, text_gate) = intra(&self.text_gate, x.text, x.text_enhanced)?;
        let (image_fused, image_gate) = intra(&self.image_gate, x.image, x.image_enhanced)?;
        if text_fused.len() != self.text_proj.in_dim || image_fused.len() != self.image_proj.in_dim {
            return Err(Error::shape("fusion input widths do not match the projections"));
        }
        let text_lat = self.text_proj.forward(p, text_fused.view());
        let image_lat = self.image_proj.forward(p, image_fused.view());
        let (joint, cross) = self.cross_gate.blend(p, text_lat.view(), image_lat.view())?;
        let (pre_scale, forgery_in, forgery_gate) = match (&self.forgery, x.forgery) {
            (Some((proj, gate)), Some(f)) => {
                if f.len() != proj.in_dim {
                    return Err(Error::shape(format!(
                        "forgery feature has length {}, expected {}",
                        f.len(),
                        proj.in_dim
                    )));
                }
                let s = proj.forward(p, f);
                let (out, t) = gate.blend(p, joint.view(), s.view())?;
                (out, Some(f.to_owned()), Some(t))
            }
            (None, None) => (joint, None, None),
            _ => {
                return Err(Error::invalid(
                    "forgery feature and forgery stage must both be present or both absent",
                ))
            }
        };
        let scale = self.scale.as_ref().map_or(1.0, |s| s.value(p));
        let out = &pre_scale * scale;
        Ok((
            out,
            FusionTrace {
                text_gate,
                image_gate,
                text_fused,
                image_fused,
                cross,
                forgery_in,
                forgery_gate,
                pre_scale,
                scale,
            },
        ))
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        t: &FusionTrace,
        d_out: ArrayView1<'_, f64>,
    ) -> FusionGrads {
        let d_pre = match &self.scale {
            Some(s) => s.backward(p, g, t.pre_scale.view(), d_out),
            None => d_out.to_owned(),
        };
        let (d_joint, d_forgery) = match (&self.forgery, &t.forgery_gate, &t.forgery_in) {
            (Some((proj, gate)), Some(gt), Some(f)) => {
                let (d_joint, d_s) = gate.backward(p, g, gt, d_pre.view());
                (d_joint, Some(proj.backward(p, g, f.view(), d_s.view())))
            }
            _ => (d_pre, None),
        };
        let (d_tlat, d_ilat) = self.cross_gate.backward(p, g, &t.cross, d_joint.view());
        let d_tf = self.text_proj.backward(p, g, t.text_fused.view(), d_tlat.view());
        let d_if = self.image_proj.backward(p, g, t.image_fused.view(), d_ilat.view());
        let split =
            |gate: &Option<GateUnit>, trace: &Option<GateTrace>, d: Array1<f64>, g: &mut Gradients| match (gate, trace)
            {
                (Some(gate), Some(tr)) => {
                    let (dh, de) = gate.backward(p, g, tr, d.view());
                    (dh, Some(de))
                }
                _ => (d, None),
            };
        let (text, text_enhanced) = split(&self.text_gate, &t.text_gate, d_tf, g);
        let (image, image_enhanced) = split(&self.image_gate, &t.image_gate, d_if, g);
        FusionGrads {
            text,
            text_enhanced,
            image,
            image_enhanced,
            forgery: d_forgery,
        }
    }
}
