use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{Capabilities, ImageEncoder, Patch, TextEncoder};
use crate::error::Result;

/// Colour channels are quantized to multiples of 1/64.
const COLOR_LEVELS: f64 = 64.0;

/// Deterministic model-free encoder.
///
/// Image embeddings depend only on the patch's mean colour, quantized to
/// 1/64 per channel. Text embeddings are derived from the prompt bytes,
/// except that a prompt containing a `#rrggbb` token embeds to exactly the
/// vector of that colour. Colour-named vocabularies therefore have a known
/// ground truth.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    dim: usize,
    seed: u64,
    input_size: usize,
}

impl StubEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "stub embedding dimension must be positive");
        Self {
            dim,
            seed,
            input_size: 224,
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Quantized colour bucket, `round(v * 64)` per channel.
    pub fn quantize(rgb: [f64; 3]) -> [u8; 3] {
        rgb.map(|v| (v.clamp(0.0, 1.0) * COLOR_LEVELS).round() as u8)
    }

    /// Embedding of a quantized colour bucket.
    pub fn color_embedding(&self, bucket: [u8; 3]) -> Vec<f32> {
        self.unit_vector(b"color", &bucket)
    }

    fn unit_vector(&self, domain: &[u8], bytes: &[u8]) -> Vec<f32> {
        let mut hasher = Sha256::new();
        hasher.update(domain);
        hasher.update(self.seed.to_le_bytes());
        hasher.update(bytes);
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return v.iter().map(|x| (x / norm) as f32).collect();
            }
        }
    }
}

/// Finds the first `#rrggbb` token in a prompt.
fn hex_color(prompt: &str) -> Option<[f64; 3]> {
    prompt.split_whitespace().find_map(|tok| {
        let hex = tok.strip_prefix('#')?;
        if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        let channel = |i: usize| {
            u8::from_str_radix(&hex[i..i + 2], 16)
                .ok()
                .map(|v| f64::from(v) / 255.0)
        };
        Some([channel(0)?, channel(2)?, channel(4)?])
    })
}

impl ImageEncoder for StubEncoder {
    fn name(&self) -> String {
        format!("stub(dim={},seed={})", self.dim, self.seed)
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
        Ok(self.color_embedding(Self::quantize(patch.pixels.mean_color())))
    }
}

impl TextEncoder for StubEncoder {
    fn name(&self) -> String {
        ImageEncoder::name(self)
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
        Ok(match hex_color(prompt) {
            Some(rgb) => self.color_embedding(Self::quantize(rgb)),
            None => self.unit_vector(b"text", prompt.as_bytes()),
        })
    }
}
