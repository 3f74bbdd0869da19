//! The one code path from an input image to output artifacts, shared by the
//! batch command and the HTTP service.

use ovseg_core::cdiy::{self, Tensor};
use ovseg_core::export::{encode_label_png, encode_rgb_png, render_overlay, Palette};
use ovseg_core::fusion::{Ablation, Fingerprint, SegmentationResult, Segmenter};
use ovseg_core::pipeline::{prepare_image, DenseInferenceConfig};
use ovseg_core::tensor::ImageTensor;
use ovseg_core::vocabulary::ClassVocabulary;
use serde::Serialize;

use crate::config::Settings;
use crate::providers::Providers;
use crate::Failure;

/// Providers, settings and palette for a whole run.
pub struct Engine {
    pub settings: Settings,
    pub providers: Providers,
    pub palette: Palette,
    pub config: DenseInferenceConfig,
}

impl Engine {
    pub fn new(settings: Settings) -> Result<Self, Failure> {
        let providers = Providers::build(&settings)?;
        let config = settings.engine(providers.image.input_size())?;
        let palette = match &settings.palette {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("palette {}: {e}", p.display())))?;
                Palette::parse(&text).map_err(Failure::usage)?
            }
            None => Palette::voc(),
        };
        Ok(Self {
            settings,
            providers,
            palette,
            config,
        })
    }

    pub fn vocabulary<S: AsRef<str>>(&self, names: &[S]) -> Result<ClassVocabulary, Failure> {
        ClassVocabulary::build(names)
            .and_then(|v| v.with_template(self.settings.template.clone()))
            .map_err(Failure::usage)
    }

    /// Binds a vocabulary, optionally with a different engine configuration.
    pub fn segmenter(
        &self,
        vocab: ClassVocabulary,
        config: Option<DenseInferenceConfig>,
    ) -> ovseg_core::Result<Segmenter<'_>> {
        Segmenter::new(
            vocab,
            config.unwrap_or_else(|| self.config.clone()),
            self.providers.image.as_ref(),
            self.providers.text.as_ref(),
            self.providers.saliency.as_ref(),
        )
    }
}

/// Output metadata embedded in PNG artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub config: &'a Fingerprint,
    pub config_fingerprint: String,
}

pub struct Segmented {
    /// The image at working resolution.
    pub image: ImageTensor,
    pub result: SegmentationResult,
    pub fingerprint: Fingerprint,
}

/// Brings the image to working resolution and segments it. `key` names the
/// image for file-based saliency.
pub fn segment_image(
    seg: &Segmenter<'_>,
    image: &ImageTensor,
    key: &str,
    ablation: Ablation,
) -> ovseg_core::Result<Segmented> {
    let cfg = seg.config();
    let image = match cfg.short_side {
        Some(side) => prepare_image(image, side, cfg.policy)?,
        None => image.clone(),
    };
    let result = seg.segment(&image, key, ablation)?;
    let fingerprint = result.meta.clone().unwrap_or_else(|| seg.fingerprint(ablation));
    Ok(Segmented {
        image,
        result,
        fingerprint,
    })
}

/// Encoded artifacts of one segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub labels_png: Vec<u8>,
    pub probabilities_cdiy: Vec<u8>,
    pub overlay_png: Vec<u8>,
    pub config_fingerprint: String,
}

pub fn probabilities_tensor(result: &SegmentationResult) -> ovseg_core::Result<Tensor> {
    let p = &result.probabilities;
    Tensor::new(vec![p.height(), p.width(), p.classes()], p.data().to_vec())
}

pub fn render(out: &Segmented, palette: &Palette) -> ovseg_core::Result<Artifacts> {
    let digest = out.fingerprint.digest();
    let meta = serde_json::to_string(&Metadata {
        config: &out.fingerprint,
        config_fingerprint: digest.clone(),
    })
    .expect("metadata serializes");
    let labels_png = encode_label_png(&out.result.labels, palette, Some(&meta))?;
    let probabilities_cdiy = cdiy::encode(&probabilities_tensor(&out.result)?);
    let (h, w, rgb) = render_overlay(&out.image, &out.result.labels, &out.fingerprint.classes, palette)?;
    let overlay_png = encode_rgb_png(w, h, &rgb, Some(&meta))?;
    Ok(Artifacts {
        labels_png,
        probabilities_cdiy,
        overlay_png,
        config_fingerprint: digest,
    })
}
