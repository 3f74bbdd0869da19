//! Provider selection strings and the backends they resolve to.

use std::path::PathBuf;
use std::str::FromStr;

use ovseg_core::encoders::{ImageEncoder, PrecomputedEncoder, StubEncoder, TextEncoder};
use ovseg_core::saliency::{ConstantSaliency, DirectorySaliency, SaliencyProvider};
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::Failure;

pub const STUB_DIM: usize = 512;
/// Objectness used by the `stub` saliency provider: equal weight for
/// background and foreground.
pub const STUB_SALIENCY: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    Stub {
        dim: usize,
        seed: u64,
        input: Option<usize>,
    },
    Precomputed(PathBuf),
    Model(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SaliencySpec {
    Constant(f32),
    Precomputed(PathBuf),
    Model(PathBuf),
}

fn split(spec: &str) -> (&str, &str) {
    spec.split_once(':').unwrap_or((spec, ""))
}

fn path_arg(kind: &str, rest: &str) -> Result<PathBuf, String> {
    if rest.is_empty() {
        Err(format!("{kind} needs a path, as in {kind}:PATH"))
    } else {
        Ok(PathBuf::from(rest))
    }
}

impl FromStr for EncoderSpec {
    type Err = String;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        match split(spec) {
            ("stub", params) => {
                let (mut dim, mut seed, mut input) = (STUB_DIM, 0u64, None);
                for kv in params.split(',').filter(|s| !s.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| format!("stub parameter {kv:?} is not key=value"))?;
                    let bad = |e: std::num::ParseIntError| format!("stub parameter {k}: {e}");
                    match k {
                        "dim" => dim = v.parse().map_err(bad)?,
                        "seed" => seed = v.parse().map_err(bad)?,
                        "input" => input = Some(v.parse().map_err(bad)?),
                        _ => return Err(format!("unknown stub parameter {k:?}")),
                    }
                }
                if dim == 0 || input == Some(0) {
                    return Err("stub dim and input must be positive".into());
                }
                Ok(EncoderSpec::Stub { dim, seed, input })
            }
            ("precomputed", rest) => Ok(EncoderSpec::Precomputed(path_arg("precomputed", rest)?)),
            ("model", rest) => Ok(EncoderSpec::Model(path_arg("model", rest)?)),
            _ => Err(format!(
                "unknown encoder {spec:?}; expected stub[:dim=N,seed=N,input=N], precomputed:PATH or model:PATH"
            )),
        }
    }
}

impl FromStr for SaliencySpec {
    type Err = String;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        match split(spec) {
            ("stub", "") => Ok(SaliencySpec::Constant(STUB_SALIENCY)),
            ("constant", v) => {
                let v: f32 = v.parse().map_err(|e| format!("constant saliency {v:?}: {e}"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("constant saliency {v} outside [0, 1]"));
                }
                Ok(SaliencySpec::Constant(v))
            }
            ("precomputed", rest) => Ok(SaliencySpec::Precomputed(path_arg("precomputed", rest)?)),
            ("model", rest) => Ok(SaliencySpec::Model(path_arg("model", rest)?)),
            _ => Err(format!(
                "unknown saliency provider {spec:?}; expected stub, constant:V, precomputed:DIR or model:PATH"
            )),
        }
    }
}

/// The three backends a run needs, built once and shared.
pub struct Providers {
    pub image: Box<dyn ImageEncoder>,
    pub text: Box<dyn TextEncoder>,
    pub saliency: Box<dyn SaliencyProvider>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderNames {
    pub image_encoder: String,
    pub text_encoder: String,
    pub saliency: String,
}

impl Providers {
    pub fn build(settings: &Settings) -> Result<Self, Failure> {
        let image_spec: EncoderSpec = settings.image_encoder.parse().map_err(Failure::Usage)?;
        let text_spec: EncoderSpec = settings.text_encoder.parse().map_err(Failure::Usage)?;
        let saliency_spec: SaliencySpec = settings.saliency.parse().map_err(Failure::Usage)?;
        let input = settings.stub_input();
        let image: Box<dyn ImageEncoder> = match image_spec {
            EncoderSpec::Stub { dim, seed, input: own } => {
                Box::new(StubEncoder::new(dim, seed).with_input_size(own.unwrap_or(input)))
            }
            EncoderSpec::Precomputed(p) => Box::new(PrecomputedEncoder::load(&p).map_err(Failure::usage)?),
            EncoderSpec::Model(p) => model::image(&p)?,
        };
        let text: Box<dyn TextEncoder> = match text_spec {
            EncoderSpec::Stub { dim, seed, input: own } => {
                Box::new(StubEncoder::new(dim, seed).with_input_size(own.unwrap_or(input)))
            }
            EncoderSpec::Precomputed(p) => Box::new(PrecomputedEncoder::load(&p).map_err(Failure::usage)?),
            EncoderSpec::Model(p) => model::text(&p)?,
        };
        if image.embedding_dim() != text.embedding_dim() {
            return Err(Failure::Usage(format!(
                "image encoder {} produces {}-d embeddings, text encoder {} produces {}-d",
                image.name(),
                image.embedding_dim(),
                text.name(),
                text.embedding_dim()
            )));
        }
        let saliency: Box<dyn SaliencyProvider> = match saliency_spec {
            SaliencySpec::Constant(v) => Box::new(ConstantSaliency(v)),
            SaliencySpec::Precomputed(dir) => {
                if !dir.is_dir() {
                    return Err(Failure::Usage(format!(
                        "saliency directory {} not found",
                        dir.display()
                    )));
                }
                Box::new(DirectorySaliency::new(dir))
            }
            SaliencySpec::Model(p) => model::saliency(&p)?,
        };
        Ok(Self { image, text, saliency })
    }

    pub fn names(&self) -> ProviderNames {
        ProviderNames {
            image_encoder: self.image.name(),
            text_encoder: self.text.name(),
            saliency: self.saliency.name(),
        }
    }
}

#[cfg(feature = "onnx")]
mod model {
    use std::path::Path;

    use ovseg_core::encoders::onnx::{OnnxImageEncoder, OnnxSaliency, OnnxTextEncoder};

    use super::*;

    pub fn image(p: &Path) -> Result<Box<dyn ImageEncoder>, Failure> {
        Ok(Box::new(OnnxImageEncoder::load(p).map_err(Failure::usage)?))
    }

    pub fn text(p: &Path) -> Result<Box<dyn TextEncoder>, Failure> {
        Ok(Box::new(OnnxTextEncoder::load(p).map_err(Failure::usage)?))
    }

    pub fn saliency(p: &Path) -> Result<Box<dyn SaliencyProvider>, Failure> {
        Ok(Box::new(OnnxSaliency::load(p).map_err(Failure::usage)?))
    }
}

#[cfg(not(feature = "onnx"))]
mod model {
    use std::path::Path;

    use super::*;

    fn unsupported<T>(p: &Path) -> Result<T, Failure> {
        Err(Failure::Usage(format!(
            "model:{} requires a build with the `onnx` feature",
            p.display()
        )))
    }

    pub fn image(p: &Path) -> Result<Box<dyn ImageEncoder>, Failure> {
        unsupported(p)
    }

    pub fn text(p: &Path) -> Result<Box<dyn TextEncoder>, Failure> {
        unsupported(p)
    }

    pub fn saliency(p: &Path) -> Result<Box<dyn SaliencyProvider>, Failure> {
        unsupported(p)
    }
}
