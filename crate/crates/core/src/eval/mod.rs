//! Dataset evaluation: confusion matrices, mIoU and reports.

mod dataset;
mod metrics;
mod report;

pub use dataset::{
    evaluate_dataset, image_key, DatasetManifest, EvalReport, ImageFailure, ManifestRecord, Timing,
    DEFAULT_CLASSES_FILE,
};
pub use metrics::{ConfusionMatrix, MiouResult};
pub use report::SUMMARY_MARKER;
