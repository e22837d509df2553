//! The full detector: encoders, evidence attention, forgery branch, dual
//! contrast, gated fusion and classifier, with batch forward and backward.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis};

use crate::classifier::{cross_entropy, cross_entropy_grad, total_loss, Classifier, ClassifierTrace, Prediction};
use crate::config::{EncoderKind, ModelConfig};
use crate::contrast::DualContrast;
use crate::dataset::{EvidenceCounts, Label, Sample};
use crate::encoders::{
    encode_evidence, FeatureKey, FeatureTable, ImageEncoder, ImageInput, ImageTrace, TextEncoder, TextInput, TextTrace,
    ToyImageEncoder, ToyTextEncoder,
};
use crate::error::{Error, Result};
use crate::evidence::{AttentionTrace, CrossAttentionBlock};
use crate::exec::Exec;
use crate::forgery::{ForgeryHead, ForgeryTrace, SpectrumFeature};
use crate::fusion::{Fusion, FusionInput, FusionLayout, FusionTrace, GateValues};
use crate::params::{Gradients, ParamBuilder, ParamId, ParamStore};

/// Frozen feature tables backing the pretrained encoder tier.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub text_features: Option<Arc<FeatureTable>>,
    pub image_features: Option<Arc<FeatureTable>>,
}

impl Resources {
    /// Opens whatever tables the configuration asks for.
    pub fn load(cfg: &ModelConfig) -> Result<Self> {
        let enc = &cfg.encoders;
        let open = |kind: EncoderKind, path: &Option<std::path::PathBuf>, what: &str| -> Result<_> {
            match (kind, path) {
                (EncoderKind::Toy, _) => Ok(None),
                (EncoderKind::Pretrained, Some(p)) => Ok(Some(Arc::new(FeatureTable::open(p)?))),
                (EncoderKind::Pretrained, None) => Err(Error::MissingResource(format!(
                    "pretrained {what} encoder needs model.encoders.{what}_features"
                ))),
            }
        };
        Ok(Self {
            text_features: open(enc.text_encoder, &enc.text_features, "text")?,
            image_features: open(enc.image_encoder, &enc.image_features, "image")?,
        })
    }
}

/// Per-sample inputs prepared once: token ids or fixed features,
/// thumbnails and the forgery spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub id: String,
    pub label: Label,
    pub text: TextInput,
    /// `None` when the caption is empty or unused.
    pub caption: Option<TextInput>,
    pub image: ImageInput,
    pub text_evidence: Vec<TextInput>,
    pub image_evidence: Vec<ImageInput>,
    pub spectrum: Option<Array3<f64>>,
}

impl EvidenceCounts for ModelInput {
    fn text_evidence_len(&self) -> usize {
        self.text_evidence.len()
    }
    fn image_evidence_len(&self) -> usize {
        self.image_evidence.len()
    }
}

/// Batch results. Losses are batch means.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub probs: Array2<f64>,
    pub features: Array2<f64>,
    pub gates: Vec<GateValues>,
    pub l_class: f64,
    pub l_sim: f64,
    pub l_tt: f64,
    pub l_ti: f64,
    pub loss: f64,
}

impl BatchOutput {
    pub fn predictions(&self) -> Vec<Label> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| {
                Prediction {
                    logits: Array1::zeros(0),
                    probs: r.to_owned(),
                }
                .label()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    text: TextEncoder,
    image: ImageEncoder,
    text_attention: Option<CrossAttentionBlock>,
    image_attention: Option<CrossAttentionBlock>,
    forgery: Option<ForgeryHead>,
    contrast: DualContrast,
    fusion: Fusion,
    classifier: Classifier,
}

type Enc<T> = (Array1<f64>, Option<T>);

struct Enhanced {
    evidence: Array2<f64>,
    out: Array1<f64>,
    trace: AttentionTrace,
}

struct SampleState {
    text: Enc<TextTrace>,
    caption: Option<Enc<TextTrace>>,
    image: Enc<ImageTrace>,
    text_evidence: Vec<Enc<TextTrace>>,
    image_evidence: Vec<Enc<ImageTrace>>,
    text_enhanced: Option<Enhanced>,
    image_enhanced: Option<Enhanced>,
    forgery: Option<(Array1<f64>, ForgeryTrace)>,
    fused: Array1<f64>,
    fusion: FusionTrace,
    pred: Prediction,
    clf: ClassifierTrace,
}

fn firsts<T>(v: &[Enc<T>]) -> Vec<Array1<f64>> {
    v.iter().map(|(h, _)| h.clone()).collect()
}

impl Model {
    /// Builds the architecture and initial parameters from `seed`.
    pub fn build(config: &ModelConfig, res: &Resources, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let enc = &config.encoders;
        let text = match (&res.text_features, enc.text_encoder) {
            (_, EncoderKind::Toy) => TextEncoder::Toy(ToyTextEncoder::new(
                &mut pb,
                "text_encoder",
                enc.text_dim,
                enc.vocab_size,
                config.max_tokens,
            )),
            (Some(t), EncoderKind::Pretrained) => TextEncoder::Pretrained(t.clone()),
            (None, EncoderKind::Pretrained) => return Err(Error::MissingResource("text feature table".into())),
        };
        let image = match (&res.image_features, enc.image_encoder) {
            (_, EncoderKind::Toy) => ImageEncoder::Toy(ToyImageEncoder::new(
                &mut pb,
                "image_encoder",
                enc.image_channels,
                enc.image_dim,
            )),
            (Some(t), EncoderKind::Pretrained) => ImageEncoder::Pretrained(t.clone()),
            (None, EncoderKind::Pretrained) => return Err(Error::MissingResource("image feature table".into())),
        };
        let (td, id) = (text.dim(), image.dim());
        let ab = config.ablation;
        let (text_attention, image_attention) = if ab.evidence_fusion() {
            (
                Some(CrossAttentionBlock::new(
                    &mut pb,
                    "text_evidence",
                    td,
                    td,
                    td,
                    config.evidence_heads,
                )?),
                Some(CrossAttentionBlock::new(
                    &mut pb,
                    "image_evidence",
                    id,
                    id,
                    id,
                    config.evidence_heads,
                )?),
            )
        } else {
            (None, None)
        };
        let forgery = ab.forgery().then(|| ForgeryHead::new(&mut pb, &config.forgery));
        let contrast = DualContrast::new(&mut pb, config.contrast(), td, id)?;
        let fusion = Fusion::new(
            &mut pb,
            &FusionLayout {
                text_dim: td,
                image_dim: id,
                forgery_dim: forgery.as_ref().map(ForgeryHead::feature_dim),
                fusion_dim: config.fusion_dim,
                evidence_gates: ab.evidence_fusion(),
                learned_gates: ab.learned_gates(),
                scaling: ab.scaling(),
                scale_init_theta: config.scale_init_theta,
            },
        );
        let classifier = Classifier::new(&mut pb, config.fusion_dim, config.classifier_hidden);
        Ok((
            Self {
                config: config.clone(),
                text,
                image,
                text_attention,
                image_attention,
                forgery,
                contrast,
                fusion,
                classifier,
            },
            pb.finish(),
        ))
    }

    /// Parameter ids grouped by component, for reporting and checks.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut groups = vec![
            ("text_encoder", self.text.params()),
            ("image_encoder", self.image.params()),
        ];
        let attn: Vec<ParamId> = [&self.text_attention, &self.image_attention]
            .into_iter()
            .flatten()
            .flat_map(CrossAttentionBlock::params)
            .collect();
        groups.push(("evidence_attention", attn));
        groups.push((
            "forgery",
            self.forgery.as_ref().map(ForgeryHead::params).unwrap_or_default(),
        ));
        groups.push(("contrast", self.contrast.params()));
        groups.push(("fusion", self.fusion.params()));
        groups.push(("classifier", self.classifier.params()));
        groups.retain(|(_, ids)| !ids.is_empty());
        groups
    }

    pub fn prepare(&self, s: &Sample) -> Result<ModelInput> {
        let id = s.id.as_str();
        let caption = if self.contrast.uses_captions() {
            match s.caption.as_deref() {
                Some("") => None,
                Some(c) => Some(self.text.prepare(c, FeatureKey::Caption(id))?),
                None if self.config.strict_captions => return Err(Error::MissingCaption(s.id.clone())),
                None => None,
            }
        } else {
            None
        };
        let k = self.config.max_evidence;
        let (text_evidence, image_evidence) = if self.config.ablation.evidence_fusion() {
            let t = s
                .text_evidence
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, e)| self.text.prepare(e, FeatureKey::TextEvidence(id, i)))
                .collect::<Result<Vec<_>>>()?;
            let im = s
                .image_evidence
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, e)| self.image.prepare(e, FeatureKey::ImageEvidence(id, i)))
                .collect::<Result<Vec<_>>>()?;
            (t, im)
        } else {
            (Vec::new(), Vec::new())
        };
        let spectrum = match self.forgery {
            Some(_) => Some(SpectrumFeature::from_image(&s.image)?.values),
            None => None,
        };
        Ok(ModelInput {
            id: s.id.clone(),
            label: s.label,
            text: self.text.prepare(&s.text, FeatureKey::Post(id))?,
            caption,
            image: self.image.prepare(&s.image, FeatureKey::Post(id))?,
            text_evidence,
            image_evidence,
            spectrum,
        })
    }

    pub fn prepare_all(&self, samples: &[Sample], exec: Exec) -> Result<Vec<ModelInput>> {
        exec.map(samples, |s| self.prepare(s)).into_iter().collect()
    }

    fn enhance(
        &self,
        p: &ParamStore,
        block: &CrossAttentionBlock,
        query: &Array1<f64>,
        items: &[Array1<f64>],
    ) -> Result<Enhanced> {
        let (evidence, mask) = encode_evidence(items, self.config.max_evidence, block.kv_dim)?;
        let (out, trace) = block.forward(p, query.view(), evidence.view(), &mask)?;
        Ok(Enhanced { evidence, out, trace })
    }

    fn forward_sample(&self, p: &ParamStore, x: &ModelInput) -> Result<SampleState> {
        let text = self.text.forward(p, &x.text);
        let caption = x.caption.as_ref().map(|c| self.text.forward(p, c));
        let image = self.image.forward(p, &x.image)?;
        let text_evidence: Vec<_> = x.text_evidence.iter().map(|e| self.text.forward(p, e)).collect();
        let image_evidence = x
            .image_evidence
            .iter()
            .map(|e| self.image.forward(p, e))
            .collect::<Result<Vec<_>>>()?;
        let text_enhanced = match &self.text_attention {
            Some(b) => Some(self.enhance(p, b, &text.0, &firsts(&text_evidence))?),
            None => None,
        };
        let image_enhanced = match &self.image_attention {
            Some(b) => Some(self.enhance(p, b, &image.0, &firsts(&image_evidence))?),
            None => None,
        };
        let forgery = match (&self.forgery, &x.spectrum) {
            (Some(head), Some(spec)) => Some(head.forward(p, spec.view())?),
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::invalid(format!(
                    "sample {} was prepared without a spectrum",
                    x.id
                )))
            }
        };
        let (fused, fusion) = self.fusion.forward(
            p,
            FusionInput {
                text: text.0.view(),
                text_enhanced: text_enhanced.as_ref().map(|e| e.out.view()),
                image: image.0.view(),
                image_enhanced: image_enhanced.as_ref().map(|e| e.out.view()),
                forgery: forgery.as_ref().map(|(h, _)| h.view()),
            },
        )?;
        let (pred, clf) = self.classifier.classify(p, fused.view())?;
        Ok(SampleState {
            text,
            caption,
            image,
            text_evidence,
            image_evidence,
            text_enhanced,
            image_enhanced,
            forgery,
            fused,
            fusion,
            pred,
            clf,
        })
    }

    /// Per-sample states, the batch contrastive term and assembled output.
    fn run(
        &self,
        p: &ParamStore,
        batch: &[&ModelInput],
        grads: Option<&mut Gradients>,
        exec: Exec,
    ) -> Result<(Vec<SampleState>, BatchOutput, Option<crate::contrast::ContrastOutput>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let states = exec
            .map(batch, |x| self.forward_sample(p, x))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let n = states.len();
        let mut l_class = 0.0;
        let mut probs = Array2::zeros((n, Label::COUNT));
        let mut features = Array2::zeros((n, self.fusion.fusion_dim));
        for (i, (s, x)) in states.iter().zip(batch).enumerate() {
            l_class += cross_entropy(s.pred.probs.view(), x.label.index())?;
            probs.row_mut(i).assign(&s.pred.probs);
            features.row_mut(i).assign(&s.fused);
        }
        l_class /= n as f64;

        let contrast = if self.contrast.is_active() {
            let td = self.text.dim();
            let mut text = Array2::zeros((n, td));
            let mut caption = Array2::zeros((n, td));
            let mut image = Array2::zeros((n, self.image.dim()));
            let mut valid = vec![false; n];
            for (i, s) in states.iter().enumerate() {
                text.row_mut(i).assign(&s.text.0);
                image.row_mut(i).assign(&s.image.0);
                if let Some((c, _)) = &s.caption {
                    caption.row_mut(i).assign(c);
                    valid[i] = true;
                }
            }
            Some(
                self.contrast
                    .loss(p, grads, text.view(), caption.view(), &valid, image.view())?,
            )
        } else {
            None
        };
        let (l_sim, l_tt, l_ti) = contrast.as_ref().map_or((0.0, 0.0, 0.0), |c| (c.l_sim, c.l_tt, c.l_ti));
        let out = BatchOutput {
            gates: states.iter().map(|s| s.fusion.gates()).collect(),
            probs,
            features,
            l_class,
            l_sim,
            l_tt,
            l_ti,
            loss: total_loss(l_class, l_sim, self.config.loss_class_weight),
        };
        Ok((states, out, contrast))
    }

    pub fn forward(&self, p: &ParamStore, batch: &[&ModelInput], exec: Exec) -> Result<BatchOutput> {
        Ok(self.run(p, batch, None, exec)?.1)
    }

    /// Batch output and gradients of the total loss.
    pub fn loss_and_grad(&self, p: &ParamStore, batch: &[&ModelInput], exec: Exec) -> Result<(BatchOutput, Gradients)> {
        let mut contrast_grads = Gradients::zeros_like(p);
        let (states, out, contrast) = self.run(p, batch, Some(&mut contrast_grads), exec)?;
        let n = states.len();
        let scale = self.config.loss_class_weight / n as f64;
        let items: Vec<(usize, &SampleState)> = states.iter().enumerate().collect();
        let parts = exec.map(&items, |&(i, s)| {
            let mut g = Gradients::zeros_like(p);
            let d_logits = cross_entropy_grad(s.pred.probs.view(), batch[i].label.index()) * scale;
            let extra = contrast
                .as_ref()
                .map(|c| (c.d_text.row(i), c.d_caption.row(i), c.d_image.row(i)));
            self.backward_sample(p, &mut g, batch[i], s, d_logits, extra);
            g
        });
        let mut total = Gradients::sum(p, parts);
        total.accumulate(&contrast_grads);
        Ok((out, total))
    }

    fn backward_sample(
        &self,
        p: &ParamStore,
        g: &mut Gradients,
        x: &ModelInput,
        s: &SampleState,
        d_logits: Array1<f64>,
        contrast: Option<(
            ndarray::ArrayView1<'_, f64>,
            ndarray::ArrayView1<'_, f64>,
            ndarray::ArrayView1<'_, f64>,
        )>,
    ) {
        let d_fused = self.classifier.backward(p, g, &s.clf, d_logits.view());
        let fg = self.fusion.backward(p, g, &s.fusion, d_fused.view());
        if let (Some(head), Some((_, trace)), Some(d)) = (&self.forgery, &s.forgery, &fg.forgery) {
            head.backward(p, g, trace, d.view());
        }
        let mut d_text = fg.text;
        let mut d_image = fg.image;
        if let Some((dt, dc, di)) = contrast {
            d_text += &dt;
            d_image += &di;
            if let (Some((_, trace)), Some(_)) = (&s.caption, &x.caption) {
                self.text.backward(p, g, trace.as_ref(), dc);
            }
        }
        if let (Some(block), Some(enh), Some(d)) = (&self.text_attention, &s.text_enhanced, &fg.text_enhanced) {
            let (dq, dev) = block.backward(p, g, s.text.0.view(), enh.evidence.view(), &enh.trace, d.view());
            d_text += &dq;
            for (k, (_, trace)) in s.text_evidence.iter().enumerate() {
                self.text.backward(p, g, trace.as_ref(), dev.row(k));
            }
        }
        if let (Some(block), Some(enh), Some(d)) = (&self.image_attention, &s.image_enhanced, &fg.image_enhanced) {
            let (dq, dev) = block.backward(p, g, s.image.0.view(), enh.evidence.view(), &enh.trace, d.view());
            d_image += &dq;
            for (k, ((_, trace), input)) in s.image_evidence.iter().zip(&x.image_evidence).enumerate() {
                self.image.backward(p, g, input, trace.as_ref(), dev.row(k));
            }
        }
        self.text.backward(p, g, s.text.1.as_ref(), d_text.view());
        self.image.backward(p, g, &x.image, s.image.1.as_ref(), d_image.view());
    }

    /// Forward over many inputs in chunks of `batch_size`; losses are
    /// size-weighted means over chunks.
    pub fn forward_all(
        &self,
        p: &ParamStore,
        inputs: &[ModelInput],
        batch_size: usize,
        exec: Exec,
    ) -> Result<BatchOutput> {
        if inputs.is_empty() {
            return Err(Error::invalid("no samples to evaluate"));
        }
        let mut parts = Vec::new();
        for chunk in inputs.chunks(batch_size.max(1)) {
            let refs: Vec<&ModelInput> = chunk.iter().collect();
            parts.push((chunk.len(), self.forward(p, &refs, exec)?));
        }
        let total = inputs.len() as f64;
        let mean = |f: fn(&BatchOutput) -> f64| parts.iter().map(|(n, o)| *n as f64 * f(o)).sum::<f64>() / total;
        let views: Vec<_> = parts.iter().map(|(_, o)| o.probs.view()).collect();
        let fviews: Vec<_> = parts.iter().map(|(_, o)| o.features.view()).collect();
        Ok(BatchOutput {
            probs: ndarray::concatenate(Axis(0), &views).expect("equal widths"),
            features: ndarray::concatenate(Axis(0), &fviews).expect("equal widths"),
            gates: parts.iter().flat_map(|(_, o)| o.gates.iter().copied()).collect(),
            l_class: mean(|o| o.l_class),
            l_sim: mean(|o| o.l_sim),
            l_tt: mean(|o| o.l_tt),
            l_ti: mean(|o| o.l_ti),
            loss: mean(|o| o.loss),
        })
    }

    pub fn contrast(&self) -> &DualContrast {
        &self.contrast
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn image_encoder(&self) -> &ImageEncoder {
        &self.image
    }
}
