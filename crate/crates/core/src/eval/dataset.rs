use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::metrics::{ConfusionMatrix, MiouResult};
use crate::error::{Error, Result};
use crate::export::{read_image, read_label_png};
use crate::fusion::{Ablation, Fingerprint, Segmenter};
use crate::pipeline::prepare_image;
use crate::saliency::{read_saliency_file, resize_saliency, ResizeMode};
use crate::tensor::IGNORE_INDEX;
use crate::vocabulary::{parse_vocabulary_file, BACKGROUND};

/// Sidecar class list looked up next to a manifest when none is given.
pub const DEFAULT_CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub label: PathBuf,
    pub saliency: Option<PathBuf>,
}

/// Evaluation records plus the class list their label indices refer to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestRecord>,
    pub class_names: Vec<String>,
    pub ignore_index: u8,
}

impl DatasetManifest {
    /// Parses `image<TAB>label[<TAB>saliency]` lines. Relative paths are
    /// resolved against `base`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base: &Path, class_names: Vec<String>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let resolve = |s: &str| base.join(s);
            match fields.as_slice() {
                [img, lbl] => entries.push(ManifestRecord {
                    image: resolve(img),
                    label: resolve(lbl),
                    saliency: None,
                }),
                [img, lbl, sal] => entries.push(ManifestRecord {
                    image: resolve(img),
                    label: resolve(lbl),
                    saliency: (!sal.is_empty()).then(|| resolve(sal)),
                }),
                _ => {
                    return Err(Error::Validation(format!(
                        "manifest line {}: expected 2 or 3 tab-separated fields, got {}",
                        n + 1,
                        fields.len()
                    )))
                }
            }
        }
        let manifest = Self {
            entries,
            class_names,
            ignore_index: IGNORE_INDEX,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Loads a manifest and its class list (default: `classes.txt` beside it).
    pub fn load(path: &Path, classes: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| Error::Read {
                path: p.to_path_buf(),
                source,
            })
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let classes_path = classes.map_or_else(|| base.join(DEFAULT_CLASSES_FILE), Path::to_path_buf);
        let class_names = parse_vocabulary_file(&read(&classes_path)?);
        Self::parse(&read(path)?, base, class_names)
    }

    /// Checks the class list and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("manifest has no entries".into()));
        }
        match self.class_names.first() {
            Some(first) if first == BACKGROUND => {}
            _ => return Err(Error::Validation(format!("class list must start with {BACKGROUND:?}"))),
        }
        if self.class_names.len() < 2 || self.class_names.len() > usize::from(self.ignore_index) {
            return Err(Error::Validation(format!(
                "class list has {} entries",
                self.class_names.len()
            )));
        }
        let missing: Vec<String> = self
            .entries
            .iter()
            .flat_map(|e| {
                std::iter::once(&e.image)
                    .chain(std::iter::once(&e.label))
                    .chain(&e.saliency)
            })
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("missing files: {}", missing.join(", "))));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageFailure {
    pub image: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub mean_image_seconds: f64,
}

/// Outcome of one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub ablation: Ablation,
    pub confusion: ConfusionMatrix,
    pub miou: Result<MiouResult, String>,
    pub config: Fingerprint,
    pub config_fingerprint: String,
    pub images: usize,
    pub failed: Vec<ImageFailure>,
    pub timing: Timing,
}

/// Segments every manifest entry and accumulates one confusion matrix.
///
/// Per-image failures are recorded and skipped. The segmenter's vocabulary
/// must list the manifest's classes in the same order.
pub fn evaluate_dataset(
    manifest: &DatasetManifest,
    segmenter: &Segmenter<'_>,
    ablation: Ablation,
) -> Result<EvalReport> {
    manifest.validate()?;
    if segmenter.vocabulary().names() != manifest.class_names.as_slice() {
        return Err(Error::Validation(format!(
            "segmenter classes {:?} differ from manifest classes {:?}",
            segmenter.vocabulary().names(),
            manifest.class_names
        )));
    }
    let classes = manifest.class_names.len();
    let started = Instant::now();
    let outcomes = segmenter.config().policy.map(&manifest.entries, |rec| {
        let t0 = Instant::now();
        let cm = evaluate_one(rec, segmenter, ablation, classes);
        (cm, t0.elapsed().as_secs_f64())
    });
    let mut total = ConfusionMatrix::new(classes);
    let mut failed = Vec::new();
    let mut image_seconds = 0.0;
    for (rec, (outcome, secs)) in manifest.entries.iter().zip(outcomes) {
        image_seconds += secs;
        match outcome {
            Ok(cm) => total.merge(&cm)?,
            Err(e) => {
                log::warn!("{}: {e}", rec.image.display());
                failed.push(ImageFailure {
                    image: rec.image.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let config = segmenter.fingerprint(ablation);
    Ok(EvalReport {
        class_names: manifest.class_names.clone(),
        ablation,
        miou: total.miou().map_err(|e| e.to_string()),
        confusion: total,
        config_fingerprint: config.digest(),
        config,
        images: manifest.entries.len(),
        failed,
        timing: Timing {
            total_seconds: started.elapsed().as_secs_f64(),
            mean_image_seconds: image_seconds / manifest.entries.len() as f64,
        },
    })
}

fn evaluate_one(
    rec: &ManifestRecord,
    seg: &Segmenter<'_>,
    ablation: Ablation,
    classes: usize,
) -> Result<ConfusionMatrix> {
    let cfg = seg.config();
    let raw = read_image(&rec.image)?;
    let image = match cfg.short_side {
        Some(s) => prepare_image(&raw, s, cfg.policy)?,
        None => raw,
    };
    let (h, w) = (image.height(), image.width());
    let gt = read_label_png(&rec.label)?.labels.resize_nearest(h, w)?;
    let result = match (&rec.saliency, ablation) {
        (Some(path), Ablation::Full | Ablation::NoMultiscale) => {
            let theta = resize_saliency(&read_saliency_file(path)?, h, w, ResizeMode::Bilinear, cfg.policy)?;
            seg.segment_with_saliency(&image, Some(&theta), ablation)?
        }
        _ => seg.segment(&image, &image_key(&rec.image), ablation)?,
    };
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(&gt, &result.labels)?;
    Ok(cm)
}

/// Name under which per-image side data (saliency maps) is looked up.
pub fn image_key(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
