//! Dense inference: per-scale patch/text similarity maps and their mean.

use serde::{Deserialize, Serialize};

use crate::encoders::{encode_image_batch, ImageEncoder, Patch};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::partition::{extract_patches, scatter_scores, upsample_bilinear, PatchGrid, ScaleConfig};
use crate::resize::resize_bilinear;
use crate::tensor::{ImageTensor, ScoreMap};
use crate::vocabulary::{normalize, TextEmbeddingMatrix};

pub const DEFAULT_ENCODER_INPUT: usize = 224;
pub const DEFAULT_SHORT_SIDE: usize = 448;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseInferenceConfig {
    pub scales: ScaleConfig,
    pub encoder_input: usize,
    /// Multiplier applied to cosine similarities before fusion.
    pub logit_scale: f64,
    /// Shorter side after the working resize; `None` keeps the native size.
    pub short_side: Option<usize>,
    #[serde(skip)]
    pub policy: ExecPolicy,
}

impl Default for DenseInferenceConfig {
    fn default() -> Self {
        Self {
            scales: ScaleConfig::default(),
            encoder_input: DEFAULT_ENCODER_INPUT,
            logit_scale: 1.0,
            short_side: Some(DEFAULT_SHORT_SIDE),
            policy: ExecPolicy::default(),
        }
    }
}

impl DenseInferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        if self.encoder_input == 0 {
            return Err(Error::Config("encoder input size must be positive".into()));
        }
        if self.short_side == Some(0) {
            return Err(Error::Config("short side must be positive".into()));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        Ok(())
    }
}

/// Per-scale similarity maps and their element-wise mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleResult {
    pub per_scale: Vec<ScoreMap>,
    pub aggregated: ScoreMap,
}

/// Aspect-preserving resize so that `min(H, W) == short_side`.
///
/// The long side is rounded half-up to whole pixels.
pub fn prepare_image(image: &ImageTensor, short_side: usize, policy: ExecPolicy) -> Result<ImageTensor> {
    let (h, w) = (image.height(), image.width());
    let (new_h, new_w) = prepared_size(h, w, short_side)?;
    if (new_h, new_w) == (h, w) {
        return Ok(image.clone());
    }
    let data = resize_bilinear(image.data(), h, w, ImageTensor::CHANNELS, new_h, new_w, policy);
    ImageTensor::new(new_h, new_w, data)
}

/// Target size of [`prepare_image`].
pub fn prepared_size(height: usize, width: usize, short_side: usize) -> Result<(usize, usize)> {
    if short_side == 0 {
        return Err(Error::Config("short side must be positive".into()));
    }
    let short = height.min(width);
    // round(long * short_side / short), halves rounding up
    let scale_long = |long: usize| (2 * long * short_side + short) / (2 * short);
    Ok(if height <= width {
        (short_side, scale_long(width))
    } else {
        (scale_long(height), short_side)
    })
}

/// Encodes every window of `grid` and returns the coarse `rows × cols × |T|`
/// map of scaled cosine similarities.
pub(crate) fn coarse_similarity(
    image: &ImageTensor,
    image_key: &str,
    grid: &PatchGrid,
    encoder: &dyn ImageEncoder,
    text: &TextEmbeddingMatrix,
    logit_scale: f64,
    policy: ExecPolicy,
) -> Result<ScoreMap> {
    if encoder.embedding_dim() != text.dim() {
        return Err(Error::Config(format!(
            "image embedding dimension {} differs from text dimension {}",
            encoder.embedding_dim(),
            text.dim()
        )));
    }
    let patches: Vec<Patch> = extract_patches(image, grid, encoder.input_size(), policy)?
        .into_iter()
        .zip(grid.windows())
        .enumerate()
        .map(|(index, (pixels, window))| Patch {
            pixels,
            image_key: image_key.to_string(),
            window: *window,
            index,
        })
        .collect();
    let embeddings = encode_image_batch(encoder, &patches, policy)?;
    let scores = policy.try_map(&embeddings, |_, e| {
        let v = normalize(e)?;
        Ok::<_, Error>(
            text.rows()
                .map(|row| {
                    let cos: f64 = v.iter().zip(row).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                    (cos.clamp(-1.0, 1.0) * logit_scale) as f32
                })
                .collect::<Vec<f32>>(),
        )
    })?;
    scatter_scores(grid, &scores)
}

/// Similarity map of one scale, upsampled to the image resolution.
pub fn similarity_map(
    image: &ImageTensor,
    grid: &PatchGrid,
    encoder: &dyn ImageEncoder,
    text: &TextEmbeddingMatrix,
    logit_scale: f64,
    policy: ExecPolicy,
) -> Result<ScoreMap> {
    let key = image.content_hash();
    let coarse = coarse_similarity(image, &key, grid, encoder, text, logit_scale, policy)?;
    upsample_bilinear(&coarse, image.height(), image.width(), policy)
}

/// Runs every configured scale and averages the resulting maps.
pub fn multiscale_inference(
    image: &ImageTensor,
    cfg: &DenseInferenceConfig,
    encoder: &dyn ImageEncoder,
    text: &TextEmbeddingMatrix,
) -> Result<MultiScaleResult> {
    cfg.validate()?;
    if encoder.input_size() != cfg.encoder_input {
        return Err(Error::Config(format!(
            "encoder {} expects {}px inputs, configuration says {}",
            encoder.name(),
            encoder.input_size(),
            cfg.encoder_input
        )));
    }
    let key = image.content_hash();
    let (h, w) = (image.height(), image.width());
    let per_scale = cfg
        .scales
        .grids(h, w)?
        .iter()
        .map(|grid| {
            coarse_similarity(image, &key, grid, encoder, text, cfg.logit_scale, cfg.policy)
                .and_then(|coarse| upsample_bilinear(&coarse, h, w, cfg.policy))
                .map_err(|e| match e {
                    Error::Miss(_) => e,
                    other => Error::Backend(format!("scale {}: {other}", grid.scale_index())),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregated = aggregate_scales(&per_scale, cfg.policy)?;
    Ok(MultiScaleResult { per_scale, aggregated })
}

/// Element-wise mean of equally shaped maps.
///
/// Values are summed in sorted order, so the result does not depend on the
/// order of `maps`.
pub fn aggregate_scales(maps: &[ScoreMap], policy: ExecPolicy) -> Result<ScoreMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Shape("no scale maps to aggregate".into()))?;
    if maps.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Shape("scale maps differ in shape".into()));
    }
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let n = maps.len();
    let mut data = vec![0.0f32; first.data().len()];
    let row = first.width() * first.classes();
    policy.for_each_chunk_mut(&mut data, row, |r, out| {
        let mut vals = vec![0.0f32; n];
        for (j, o) in out.iter_mut().enumerate() {
            let i = r * row + j;
            for (v, m) in vals.iter_mut().zip(maps) {
                *v = m.data()[i];
            }
            vals.sort_by(f32::total_cmp);
            let sum: f64 = vals.iter().map(|&v| f64::from(v)).sum();
            *o = (sum / n as f64) as f32;
        }
    });
    ScoreMap::new(first.height(), first.width(), first.classes(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Capabilities, StubEncoder, TextEncoder};
    use crate::vocabulary::{encode_vocabulary, ClassVocabulary};

    #[test]
    fn prepared_sizes() {
        assert_eq!(prepared_size(448, 600, 448).unwrap(), (448, 600));
        assert_eq!(prepared_size(224, 224, 448).unwrap(), (448, 448));
        assert_eq!(prepared_size(300, 500, 448).unwrap(), (448, 747));
        assert_eq!(prepared_size(500, 300, 448).unwrap(), (747, 448));
        // 3 * 448 / 2 = 672 exactly; 5 * 448 / 2 ... half-up on .5
        assert_eq!(prepared_size(2, 3, 448).unwrap(), (448, 672));
        assert_eq!(prepared_size(4, 5, 2).unwrap(), (2, 3)); // 2.5 -> 3
    }

    #[test]
    fn prepare_is_noop_when_satisfied() {
        let img = ImageTensor::filled(448, 600, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(prepare_image(&img, 448, ExecPolicy::Parallel).unwrap(), img);
        let small = ImageTensor::filled(224, 224, [0.1, 0.2, 0.3]).unwrap();
        let up = prepare_image(&small, 448, ExecPolicy::Parallel).unwrap();
        assert_eq!((up.height(), up.width()), (448, 448));
    }

    /// Image encoder returning a fixed vector for every patch.
    struct Fixed(Vec<f32>);
    impl ImageEncoder for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn embedding_dim(&self) -> usize {
            self.0.len()
        }
        fn input_size(&self) -> usize {
            8
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                concurrent: true,
                batched: false,
            }
        }
        fn encode_image(&self, _: &Patch) -> Result<Vec<f32>> {
            Ok(self.0.clone())
        }
    }

    fn text_matrix(rows: &[Vec<f32>]) -> TextEmbeddingMatrix {
        TextEmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_embedding_scores_logit_scale() {
        let text = text_matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let img = ImageTensor::filled(12, 10, [0.5; 3]).unwrap();
        let grid = PatchGrid::new(12, 10, 16).unwrap();
        let enc = Fixed(vec![0.0, 3.0, 0.0]);
        let map = similarity_map(&img, &grid, &enc, &text, 2.5, ExecPolicy::Sequential).unwrap();
        for px in map.pixels() {
            assert_eq!(px, &[0.0, 2.5]);
        }
    }

    #[test]
    fn orthogonal_embedding_scores_zero() {
        let text = text_matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let img = ImageTensor::filled(9, 9, [0.5; 3]).unwrap();
        let grid = PatchGrid::new(9, 9, 4).unwrap();
        let map = similarity_map(
            &img,
            &grid,
            &Fixed(vec![0.0, 0.0, 1.0]),
            &text,
            1.0,
            ExecPolicy::Parallel,
        )
        .unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_scale_aggregate_is_that_scale() {
        let enc = StubEncoder::new(8, 2).with_input_size(16);
        let vocab = ClassVocabulary::build(&["a", "b"]).unwrap();
        let text = encode_vocabulary(&vocab, &enc as &dyn TextEncoder, ExecPolicy::Sequential).unwrap();
        let data: Vec<f32> = (0..30 * 20 * 3).map(|i| (i % 17) as f32 / 16.0).collect();
        let img = ImageTensor::new(30, 20, data).unwrap();
        let cfg = DenseInferenceConfig {
            scales: ScaleConfig::new(vec![10], false).unwrap(),
            encoder_input: 16,
            ..Default::default()
        };
        let r = multiscale_inference(&img, &cfg, &enc, &text).unwrap();
        assert_eq!(r.per_scale.len(), 1);
        assert_eq!(r.aggregated, r.per_scale[0]);
    }

    #[test]
    fn mean_of_constant_maps() {
        let a = ScoreMap::filled(3, 4, 2, 0.2).unwrap();
        let b = ScoreMap::filled(3, 4, 2, 0.4).unwrap();
        let m = aggregate_scales(&[a, b], ExecPolicy::Parallel).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn encoder_input_mismatch_is_config_error() {
        let enc = StubEncoder::new(8, 2).with_input_size(32);
        let text = text_matrix(&[vec![1.0; 8], vec![-1.0; 8]]);
        let img = ImageTensor::filled(16, 16, [0.5; 3]).unwrap();
        let cfg = DenseInferenceConfig::default();
        assert!(matches!(
            multiscale_inference(&img, &cfg, &enc, &text),
            Err(Error::Config(_))
        ));
        let cfg = DenseInferenceConfig {
            logit_scale: 0.0,
            encoder_input: 32,
            ..Default::default()
        };
        assert!(multiscale_inference(&img, &cfg, &enc, &text).is_err());
    }
}
