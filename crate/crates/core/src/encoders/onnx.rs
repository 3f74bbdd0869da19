//! Neural-network interchange-format backend for the embedding towers and
//! for a saliency model.
//!
//! Each backend is described by a small JSON manifest whose paths are
//! resolved against the manifest's directory:
//!
//! ```json
//! {
//!   "vision_model": "visual.onnx",
//!   "text_model": "textual.onnx",
//!   "tokenizer": "tokenizer.json",
//!   "embedding_dim": 512,
//!   "input_size": 224
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tokenizers::Tokenizer;
use tract_onnx::prelude::*;

use super::{Capabilities, ImageEncoder, Patch, TextEncoder};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::resize::resize_bilinear;
use crate::saliency::{ProviderKind, SaliencyProvider, SaliencyRequest};
use crate::tensor::{ImageTensor, SaliencyMap};

const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

type Plan = TypedRunnableModel<TypedModel>;

#[derive(Debug, Clone, Deserialize)]
pub struct ModelManifest {
    #[serde(default)]
    pub vision_model: Option<PathBuf>,
    #[serde(default)]
    pub text_model: Option<PathBuf>,
    #[serde(default)]
    pub tokenizer: Option<PathBuf>,
    #[serde(default)]
    pub saliency_model: Option<PathBuf>,
    #[serde(default)]
    pub embedding_dim: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_mean")]
    pub mean: [f32; 3],
    #[serde(default = "default_std")]
    pub std: [f32; 3],
    #[serde(default = "default_context_length")]
    pub context_length: usize,
    #[serde(default)]
    pub pad_id: i64,
    /// Apply a logistic sigmoid to raw saliency outputs.
    #[serde(default)]
    pub saliency_sigmoid: bool,
}

fn default_input_size() -> usize {
    224
}

fn default_mean() -> [f32; 3] {
    CLIP_MEAN
}

fn default_std() -> [f32; 3] {
    CLIP_STD
}

fn default_context_length() -> usize {
    77
}

impl ModelManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok((m, path.parent().unwrap_or(Path::new(".")).to_path_buf()))
    }
}

fn required(field: &Option<PathBuf>, name: &str, base: &Path) -> Result<PathBuf> {
    field
        .as_ref()
        .map(|p| base.join(p))
        .ok_or_else(|| Error::Config(format!("model manifest lacks {name}")))
}

fn backend<E: std::fmt::Display>(e: E) -> Error {
    Error::Backend(e.to_string())
}

fn load_plan(path: &Path, input: InferenceFact) -> Result<Plan> {
    tract_onnx::onnx()
        .model_for_path(path)
        .and_then(|m| m.with_input_fact(0, input))
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(|e| Error::Backend(format!("{}: {e}", path.display())))
}

fn chw(image: &ImageTensor, mean: [f32; 3], std: [f32; 3]) -> Vec<f32> {
    let (h, w) = (image.height(), image.width());
    let mut out = vec![0.0f32; 3 * h * w];
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = (px[c] - mean[c]) / std[c];
        }
    }
    out
}

fn first_output(plan: &Plan, input: Tensor) -> Result<(Vec<usize>, Vec<f32>)> {
    let outputs = plan.run(tvec!(input.into())).map_err(backend)?;
    let out = outputs
        .first()
        .ok_or_else(|| Error::Backend("model produced no outputs".into()))?;
    let view = out.to_array_view::<f32>().map_err(backend)?;
    Ok((view.shape().to_vec(), view.iter().copied().collect()))
}

/// Vision tower returning one pooled embedding per square input.
pub struct OnnxImageEncoder {
    plan: Plan,
    source: String,
    dim: usize,
    input_size: usize,
    mean: [f32; 3],
    std: [f32; 3],
}

impl OnnxImageEncoder {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (m, base) = ModelManifest::load(manifest_path)?;
        let model = required(&m.vision_model, "vision_model", &base)?;
        let s = m.input_size;
        let plan = load_plan(&model, f32::fact([1, 3, s, s]).into())?;
        Ok(Self {
            plan,
            source: model.display().to_string(),
            dim: m.embedding_dim,
            input_size: s,
            mean: m.mean,
            std: m.std,
        })
    }
}

impl ImageEncoder for OnnxImageEncoder {
    fn name(&self) -> String {
        format!("onnx({})", self.source)
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            batched: false,
        }
    }

    fn encode_image(&self, patch: &Patch) -> Result<Vec<f32>> {
        let s = self.input_size;
        let input = Tensor::from_shape(&[1, 3, s, s], &chw(&patch.pixels, self.mean, self.std)).map_err(backend)?;
        let (_, data) = first_output(&self.plan, input)?;
        if data.len() != self.dim {
            return Err(Error::Backend(format!(
                "vision output has {} values, expected {}",
                data.len(),
                self.dim
            )));
        }
        Ok(data)
    }
}

/// Text tower fed with padded token ids.
pub struct OnnxTextEncoder {
    plan: Plan,
    tokenizer: Tokenizer,
    source: String,
    dim: usize,
    context_length: usize,
    pad_id: i64,
}

impl OnnxTextEncoder {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (m, base) = ModelManifest::load(manifest_path)?;
        let model = required(&m.text_model, "text_model", &base)?;
        let tok_path = required(&m.tokenizer, "tokenizer", &base)?;
        let tokenizer =
            Tokenizer::from_file(&tok_path).map_err(|e| Error::Backend(format!("{}: {e}", tok_path.display())))?;
        let plan = load_plan(&model, i64::fact([1, m.context_length]).into())?;
        Ok(Self {
            plan,
            tokenizer,
            source: model.display().to_string(),
            dim: m.embedding_dim,
            context_length: m.context_length,
            pad_id: m.pad_id,
        })
    }
}

impl TextEncoder for OnnxTextEncoder {
    fn name(&self) -> String {
        format!("onnx({})", self.source)
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            batched: false,
        }
    }

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>> {
        let enc = self.tokenizer.encode(prompt, true).map_err(backend)?;
        let mut ids: Vec<i64> = enc.get_ids().iter().map(|&i| i64::from(i)).collect();
        ids.truncate(self.context_length);
        // The end-of-text token has the largest id; its position selects
        // the pooled row when the model returns per-token features.
        let eot = ids
            .iter()
            .enumerate()
            .max_by_key(|&(i, &id)| (id, std::cmp::Reverse(i)))
            .map_or(0, |(i, _)| i);
        ids.resize(self.context_length, self.pad_id);
        let input = Tensor::from_shape(&[1, self.context_length], &ids).map_err(backend)?;
        let (shape, data) = first_output(&self.plan, input)?;
        let row = match shape.as_slice() {
            [1, d] if *d == self.dim => data,
            [1, l, d] if *d == self.dim && eot < *l => data[eot * d..(eot + 1) * d].to_vec(),
            _ => {
                return Err(Error::Backend(format!(
                    "text output shape {shape:?} does not carry {}-d embeddings",
                    self.dim
                )))
            }
        };
        Ok(row)
    }
}

/// Saliency model mapping an RGB image to a single-channel map.
pub struct OnnxSaliency {
    plan: Plan,
    source: String,
    input_size: usize,
    mean: [f32; 3],
    std: [f32; 3],
    sigmoid: bool,
}

impl OnnxSaliency {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (m, base) = ModelManifest::load(manifest_path)?;
        let model = required(&m.saliency_model, "saliency_model", &base)?;
        let s = m.input_size;
        let plan = load_plan(&model, f32::fact([1, 3, s, s]).into())?;
        Ok(Self {
            plan,
            source: model.display().to_string(),
            input_size: s,
            mean: m.mean,
            std: m.std,
            sigmoid: m.saliency_sigmoid,
        })
    }
}

impl SaliencyProvider for OnnxSaliency {
    fn name(&self) -> String {
        format!("onnx({})", self.source)
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::ModelBased
    }

    fn raw_saliency(&self, request: SaliencyRequest<'_>) -> Result<SaliencyMap> {
        let img = request.image;
        let s = self.input_size;
        let pixels = resize_bilinear(img.data(), img.height(), img.width(), 3, s, s, ExecPolicy::Sequential);
        let resized = ImageTensor::new(s, s, pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        let input = Tensor::from_shape(&[1, 3, s, s], &chw(&resized, self.mean, self.std)).map_err(backend)?;
        let (shape, data) = first_output(&self.plan, input)?;
        let (h, w) = match shape.as_slice() {
            [.., h, w] if h * w == data.len() => (*h, *w),
            _ => {
                return Err(Error::Backend(format!(
                    "saliency output shape {shape:?} is not a single map"
                )))
            }
        };
        let data = data
            .into_iter()
            .map(|v| {
                let v = if self.sigmoid { 1.0 / (1.0 + (-v).exp()) } else { v };
                v.clamp(0.0, 1.0)
            })
            .collect();
        SaliencyMap::new(h, w, data)
    }
}
