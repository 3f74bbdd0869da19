//! Image and text embedding providers.
//!
//! Providers return raw pooled embeddings; the engine owns normalization.
//! Three backends ship with the crate: a deterministic [`StubEncoder`] for
//! tests, a [`PrecomputedEncoder`] that replays stored vectors, and (with the
//! `onnx` feature) a neural runtime backend.

#[cfg(feature = "onnx")]
pub mod onnx;
mod precomputed;
mod stub;

pub use precomputed::{EmbeddingManifest, ManifestEntry, PrecomputedEncoder};
pub use stub::StubEncoder;

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::partition::Window;
use crate::tensor::ImageTensor;

/// What a provider allows the engine to do with it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Capabilities {
    /// `encode_*` may be called from several threads at once.
    pub concurrent: bool,
    /// `encode_image_batch` is implemented natively.
    pub batched: bool,
}

/// One encoder input: a resized window plus where it came from.
#[derive(Debug, Clone)]
pub struct Patch {
    pub pixels: ImageTensor,
    /// Content hash of the (prepared) source image.
    pub image_key: String,
    pub window: Window,
    /// Position in the submitted batch.
    pub index: usize,
}

impl Patch {
    /// Lookup key for precomputed embeddings: `hash:x,y,w,h:input`.
    pub fn content_key(&self) -> String {
        let w = &self.window;
        format!(
            "{}:{},{},{},{}:{}",
            self.image_key,
            w.x,
            w.y,
            w.width,
            w.height,
            self.pixels.width()
        )
    }
}

pub trait ImageEncoder: Send + Sync {
    fn name(&self) -> String;
    fn embedding_dim(&self) -> usize;
    /// Side length of the square input the encoder expects.
    fn input_size(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    fn encode_image(&self, patch: &Patch) -> Result<Vec<f32>>;

    fn encode_image_batch(&self, patches: &[Patch]) -> Result<Vec<Vec<f32>>> {
        patches.iter().map(|p| self.encode_image(p)).collect()
    }
}

pub trait TextEncoder: Send + Sync {
    fn name(&self) -> String;
    fn embedding_dim(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>>;
}

fn check_input(encoder: &dyn ImageEncoder, patch: &Patch) -> Result<()> {
    let size = encoder.input_size();
    if patch.pixels.height() != size || patch.pixels.width() != size {
        return Err(Error::Shape(format!(
            "patch {} is {}x{}, encoder expects {size}x{size}",
            patch.index,
            patch.pixels.height(),
            patch.pixels.width()
        )));
    }
    Ok(())
}

fn check_output(encoder: &dyn ImageEncoder, index: usize, v: &[f32]) -> Result<()> {
    if v.len() != encoder.embedding_dim() {
        return Err(Error::Backend(format!(
            "patch {index}: embedding dimension {}, expected {}",
            v.len(),
            encoder.embedding_dim()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Backend(format!("patch {index}: non-finite embedding")));
    }
    Ok(())
}

/// Encodes a single patch, validating input size and output.
pub fn encode_image(encoder: &dyn ImageEncoder, patch: &Patch) -> Result<Vec<f32>> {
    check_input(encoder, patch)?;
    let v = encoder.encode_image(patch).map_err(|e| match e {
        Error::Miss(_) => e,
        other => Error::Backend(format!("patch {}: {other}", patch.index)),
    })?;
    check_output(encoder, patch.index, &v)?;
    Ok(v)
}

/// Encodes patches in order. Concurrent providers are fanned out per patch
/// under a parallel policy; everything else receives one ordered batch.
pub fn encode_image_batch(encoder: &dyn ImageEncoder, patches: &[Patch], policy: ExecPolicy) -> Result<Vec<Vec<f32>>> {
    let caps = encoder.capabilities();
    if caps.concurrent && policy.is_parallel() {
        return policy.try_map(patches, |_, p| encode_image(encoder, p));
    }
    if !caps.batched {
        return patches.iter().map(|p| encode_image(encoder, p)).collect();
    }
    for p in patches {
        check_input(encoder, p)?;
    }
    let out = encoder.encode_image_batch(patches).map_err(|e| match e {
        Error::Miss(_) => e,
        other => Error::Backend(format!("batch of {}: {other}", patches.len())),
    })?;
    if out.len() != patches.len() {
        return Err(Error::Backend(format!(
            "batch returned {} embeddings for {} patches",
            out.len(),
            patches.len()
        )));
    }
    for (p, v) in patches.iter().zip(&out) {
        check_output(encoder, p.index, v)?;
    }
    Ok(out)
}
