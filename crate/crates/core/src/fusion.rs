//! Objectness-guided fusion and the end-to-end segmentation entry point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::pipeline::{multiscale_inference, DenseInferenceConfig};
use crate::saliency::{
    load_saliency, objectness_weights, uniform_weights, ResizeMode, SaliencyProvider, SaliencyRequest,
};
use crate::tensor::{ImageTensor, LabelMap, SaliencyMap, ScoreMap};
use crate::vocabulary::{encode_vocabulary, ClassVocabulary, TextEmbeddingMatrix};

/// Which parts of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Only the coarsest scale.
    NoMultiscale,
    /// Weights of one for every class, background included.
    NoObjectness,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoMultiscale, Ablation::NoObjectness];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMultiscale => "no_multiscale",
            Ablation::NoObjectness => "no_objectness",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "no_multiscale" => Ok(Ablation::NoMultiscale),
            "no_objectness" => Ok(Ablation::NoObjectness),
            _ => Err(Error::Config(format!(
                "unknown ablation {s:?} (expected full, no_multiscale or no_objectness)"
            ))),
        }
    }
}

/// Everything that determines a segmentation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub classes: Vec<String>,
    pub template: String,
    pub patch_sizes: Vec<usize>,
    pub global_scale0: bool,
    pub logit_scale: f64,
    pub short_side: Option<usize>,
    pub encoder_input: usize,
    pub ablation: Ablation,
    pub image_encoder: String,
    pub text_encoder: String,
    pub saliency: String,
}

impl Fingerprint {
    /// First 16 hex digits of the SHA-256 of the JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("fingerprint serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Per-pixel class probabilities.
    pub probabilities: ScoreMap,
    pub labels: LabelMap,
    pub meta: Option<Fingerprint>,
}

impl SegmentationResult {
    /// Fraction of pixels assigned to each class.
    pub fn coverage(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.probabilities.classes()];
        for &l in self.labels.data() {
            counts[usize::from(l)] += 1;
        }
        let n = self.labels.data().len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Softmax over classes of `scores ⊙ weights`, with arg-max labels.
///
/// Ties go to the lowest class index.
pub fn fuse(scores: &ScoreMap, weights: &ScoreMap, policy: ExecPolicy) -> Result<SegmentationResult> {
    if !scores.same_shape(weights) {
        return Err(Error::Shape(format!(
            "scores {}x{}x{} vs weights {}x{}x{}",
            scores.height(),
            scores.width(),
            scores.classes(),
            weights.height(),
            weights.width(),
            weights.classes()
        )));
    }
    let classes = scores.classes();
    if classes > usize::from(u8::MAX) {
        return Err(Error::Shape(format!("{classes} classes do not fit 8-bit labels")));
    }
    let row = scores.width() * classes;
    let mut probs = vec![0.0f32; scores.data().len()];
    policy.for_each_chunk_mut(&mut probs, row, |r, out| {
        let s = &scores.data()[r * row..(r + 1) * row];
        let w = &weights.data()[r * row..(r + 1) * row];
        let mut logits = vec![0.0f64; classes];
        for ((o, s), w) in out
            .chunks_exact_mut(classes)
            .zip(s.chunks_exact(classes))
            .zip(w.chunks_exact(classes))
        {
            softmax_into(s, w, &mut logits, o);
        }
    });
    let labels: Vec<u8> = probs.chunks_exact(classes).map(argmax).collect();
    Ok(SegmentationResult {
        probabilities: ScoreMap::new(scores.height(), scores.width(), classes, probs)?,
        labels: LabelMap::new(scores.height(), scores.width(), labels)?,
        meta: None,
    })
}

fn softmax_into(scores: &[f32], weights: &[f32], logits: &mut [f64], out: &mut [f32]) {
    for ((l, &s), &w) in logits.iter_mut().zip(scores).zip(weights) {
        *l = f64::from(s) * f64::from(w);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for (o, &e) in out.iter_mut().zip(logits.iter()) {
        *o = (e / total) as f32;
    }
}

fn argmax(values: &[f32]) -> u8 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as u8
}

/// A vocabulary bound to a set of providers, ready to segment images.
///
/// The vocabulary is encoded once at construction.
pub struct Segmenter<'a> {
    vocab: ClassVocabulary,
    text: TextEmbeddingMatrix,
    cfg: DenseInferenceConfig,
    image_encoder: &'a dyn ImageEncoder,
    text_encoder_name: String,
    saliency: &'a dyn SaliencyProvider,
    saliency_resize: ResizeMode,
}

impl<'a> Segmenter<'a> {
    pub fn new(
        vocab: ClassVocabulary,
        cfg: DenseInferenceConfig,
        image_encoder: &'a dyn ImageEncoder,
        text_encoder: &dyn TextEncoder,
        saliency: &'a dyn SaliencyProvider,
    ) -> Result<Self> {
        cfg.validate()?;
        let text = encode_vocabulary(&vocab, text_encoder, cfg.policy).map_err(|e| e.in_stage("text encoding"))?;
        Ok(Self {
            vocab,
            text,
            cfg,
            image_encoder,
            text_encoder_name: text_encoder.name(),
            saliency,
            saliency_resize: ResizeMode::Bilinear,
        })
    }

    pub fn with_saliency_resize(mut self, mode: ResizeMode) -> Self {
        self.saliency_resize = mode;
        self
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &DenseInferenceConfig {
        &self.cfg
    }

    pub fn text_embeddings(&self) -> &TextEmbeddingMatrix {
        &self.text
    }

    pub fn fingerprint(&self, ablation: Ablation) -> Fingerprint {
        Fingerprint {
            classes: self.vocab.names().to_vec(),
            template: self.vocab.template().to_string(),
            patch_sizes: self.cfg.scales.patch_sizes().to_vec(),
            global_scale0: self.cfg.scales.global_scale0(),
            logit_scale: self.cfg.logit_scale,
            short_side: self.cfg.short_side,
            encoder_input: self.cfg.encoder_input,
            ablation,
            image_encoder: self.image_encoder.name(),
            text_encoder: self.text_encoder_name.clone(),
            saliency: match ablation {
                Ablation::NoObjectness => "none".into(),
                _ => self.saliency.name(),
            },
        }
    }

    /// Segments an image that is already at working resolution, fetching
    /// objectness for `key` from the configured provider.
    pub fn segment(&self, image: &ImageTensor, key: &str, ablation: Ablation) -> Result<SegmentationResult> {
        let theta = match ablation {
            Ablation::NoObjectness => None,
            _ => Some(
                load_saliency(
                    self.saliency,
                    SaliencyRequest { key, image },
                    image.height(),
                    image.width(),
                    self.saliency_resize,
                    self.cfg.policy,
                )
                .map_err(|e| e.in_stage("saliency"))?,
            ),
        };
        self.segment_with_saliency(image, theta.as_ref(), ablation)
    }

    /// Segments with an explicit objectness map (ignored for `NoObjectness`).
    pub fn segment_with_saliency(
        &self,
        image: &ImageTensor,
        theta: Option<&SaliencyMap>,
        ablation: Ablation,
    ) -> Result<SegmentationResult> {
        let cfg = match ablation {
            Ablation::NoMultiscale => DenseInferenceConfig {
                scales: self.cfg.scales.coarsest(),
                ..self.cfg.clone()
            },
            _ => self.cfg.clone(),
        };
        let dense = multiscale_inference(image, &cfg, self.image_encoder, &self.text)
            .map_err(|e| e.in_stage("dense inference"))?;
        let (h, w, t) = (image.height(), image.width(), self.vocab.len());
        let weights = match (ablation, theta) {
            (Ablation::NoObjectness, _) => uniform_weights(h, w, t)?,
            (_, Some(theta)) => {
                if (theta.height(), theta.width()) != (h, w) {
                    return Err(Error::Shape(format!(
                        "saliency {}x{} for image {h}x{w}",
                        theta.height(),
                        theta.width()
                    ))
                    .in_stage("saliency"));
                }
                objectness_weights(theta, t)?
            }
            (_, None) => return Err(Error::Config("objectness map required".into()).in_stage("saliency")),
        };
        let mut result = fuse(&dense.aggregated, &weights, cfg.policy).map_err(|e| e.in_stage("fusion"))?;
        result.meta = Some(self.fingerprint(ablation));
        Ok(result)
    }
}

/// One-shot segmentation: encodes the vocabulary and segments one image.
#[allow(clippy::too_many_arguments)]
pub fn segment(
    image: &ImageTensor,
    key: &str,
    vocab: &ClassVocabulary,
    cfg: &DenseInferenceConfig,
    image_encoder: &dyn ImageEncoder,
    text_encoder: &dyn TextEncoder,
    saliency: &dyn SaliencyProvider,
    ablation: Ablation,
) -> Result<SegmentationResult> {
    Segmenter::new(vocab.clone(), cfg.clone(), image_encoder, text_encoder, saliency)?.segment(image, key, ablation)
}
