//! Two-layer perceptron over the fused feature, softmax and cross-entropy.

use ndarray::{Array1, ArrayView1};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::nn::act::{leaky_relu, leaky_relu_backward};
use crate::nn::Linear;
use crate::params::{Gradients, Init, ParamBuilder, ParamId, ParamStore};

pub const LEAKY_SLOPE: f64 = 0.01;
const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// `−ln max(probs[label], 1e-12)`.
pub fn cross_entropy(probs: ArrayView1<'_, f64>, label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::invalid(format!("label {label} outside {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `weight·L_class + L_sim`; the weight defaults to 1.
pub fn total_loss(l_class: f64, l_sim: f64, class_weight: f64) -> f64 {
    class_weight * l_class + l_sim
}

#[derive(Debug, Clone)]
pub struct Classifier {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    input: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

impl Prediction {
    pub fn label(&self) -> Label {
        let best = self
            .probs
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
            )
            .0;
        Label::from_index(best).expect("three classes")
    }
}

impl Classifier {
    pub fn new(pb: &mut ParamBuilder, input_dim: usize, hidden: usize) -> Self {
        let init = Init::TruncNormal(0.02);
        Self {
            fc1: Linear::new(pb, "classifier.fc1", input_dim, hidden, true, init),
            fc2: Linear::new(pb, "classifier.fc2", hidden, Label::COUNT, true, init),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }

    pub fn classify(&self, p: &ParamStore, h: ArrayView1<'_, f64>) -> Result<(Prediction, ClassifierTrace)> {
        if h.len() != self.fc1.in_dim {
            return Err(Error::shape(format!(
                "classifier expects {} inputs, got {}",
                self.fc1.in_dim,
                h.len()
            )));
        }
        let hidden_pre = self.fc1.forward(p, h);
        let hidden = leaky_relu(hidden_pre.view(), LEAKY_SLOPE);
        let logits = self.fc2.forward(p, hidden.view());
        let probs = softmax(logits.view());
        Ok((
            Prediction { logits, probs },
            ClassifierTrace {
                input: h.to_owned(),
                hidden_pre,
                hidden,
            },
        ))
    }

    /// Backpropagates `d_logits`, returning the gradient for the input.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        t: &ClassifierTrace,
        d_logits: ArrayView1<'_, f64>,
    ) -> Array1<f64> {
        let d_hidden = self.fc2.backward(p, g, t.hidden.view(), d_logits);
        let d_pre = leaky_relu_backward(t.hidden_pre.view(), d_hidden.view(), LEAKY_SLOPE);
        self.fc1.backward(p, g, t.input.view(), d_pre.view())
    }
}

/// Gradient of `cross_entropy(softmax(logits), label)` w.r.t. the logits.
pub fn cross_entropy_grad(probs: ArrayView1<'_, f64>, label: usize) -> Array1<f64> {
    let mut d = probs.to_owned();
    if probs[label] < PROB_FLOOR {
        d.fill(0.0);
    } else {
        d[label] -= 1.0;
    }
    d
}
