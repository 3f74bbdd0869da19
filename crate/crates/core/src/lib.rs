//! Training-free open-vocabulary semantic segmentation.
//!
//! A frozen image/text embedding model is run over a multi-scale patch grid;
//! per-class similarity maps are averaged across scales and fused with an
//! unsupervised objectness map into per-pixel class probabilities.
//!
//! ```
//! use ovseg_core::prelude::*;
//!
//! let image = ImageTensor::filled(64, 64, [1.0, 0.0, 0.0]).unwrap();
//! let vocab = ClassVocabulary::build(&["#ff0000", "#0000ff"]).unwrap();
//! let cfg = DenseInferenceConfig {
//!     scales: ScaleConfig::new(vec![32, 16], false).unwrap(),
//!     short_side: None,
//!     ..Default::default()
//! };
//! let enc = StubEncoder::new(16, 0);
//! let seg = Segmenter::new(vocab, cfg, &enc, &enc, &ConstantSaliency(1.0)).unwrap();
//! let out = seg.segment(&image, "red", Ablation::Full).unwrap();
//! assert!(out.labels.data().iter().all(|&l| l == 1));
//! ```

pub mod cdiy;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod exec;
pub mod export;
pub mod fusion;
pub mod partition;
pub mod pipeline;
pub mod resize;
pub mod saliency;
pub mod tensor;
pub mod vocabulary;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::encoders::{ImageEncoder, PrecomputedEncoder, StubEncoder, TextEncoder};
    pub use crate::error::{Error, Result};
    pub use crate::exec::ExecPolicy;
    pub use crate::fusion::{fuse, Ablation, SegmentationResult, Segmenter};
    pub use crate::partition::ScaleConfig;
    pub use crate::pipeline::{prepare_image, DenseInferenceConfig};
    pub use crate::saliency::{ConstantSaliency, DirectorySaliency, SaliencyProvider};
    pub use crate::tensor::{ImageTensor, LabelMap, SaliencyMap, ScoreMap};
    pub use crate::vocabulary::ClassVocabulary;
}
