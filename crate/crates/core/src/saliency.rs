//! Objectness maps: where they come from and how they weight class scores.
//!
//! Saliency is consumed from an external unsupervised localizer, either as
//! precomputed map files, as a set of scored instance masks that are merged
//! here, or (with the `onnx` feature) from a model file.

use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::cdiy::read_tensor;
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::resize::resize_bilinear;
use crate::tensor::{nearest_src, ImageTensor, SaliencyMap, ScoreMap};

/// Default confidence threshold below which instance masks are discarded.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    FileBased,
    ModelBased,
    Constant,
}

/// How a source map is brought to the working resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    #[default]
    Bilinear,
    Nearest,
}

/// What a provider gets to look at: the image's name and its pixels.
#[derive(Debug, Clone, Copy)]
pub struct SaliencyRequest<'a> {
    pub key: &'a str,
    pub image: &'a ImageTensor,
}

pub trait SaliencyProvider: Send + Sync {
    fn name(&self) -> String;
    fn kind(&self) -> ProviderKind;
    /// Returns a map at whatever resolution the source has.
    fn raw_saliency(&self, request: SaliencyRequest<'_>) -> Result<SaliencyMap>;
}

/// Fetches saliency for an image and resizes it to `target_h × target_w`.
pub fn load_saliency(
    provider: &dyn SaliencyProvider,
    request: SaliencyRequest<'_>,
    target_h: usize,
    target_w: usize,
    mode: ResizeMode,
    policy: ExecPolicy,
) -> Result<SaliencyMap> {
    let raw = provider.raw_saliency(request)?;
    resize_saliency(&raw, target_h, target_w, mode, policy)
}

pub fn resize_saliency(
    map: &SaliencyMap,
    target_h: usize,
    target_w: usize,
    mode: ResizeMode,
    policy: ExecPolicy,
) -> Result<SaliencyMap> {
    if (map.height(), map.width()) == (target_h, target_w) {
        return Ok(map.clone());
    }
    let data = match mode {
        ResizeMode::Bilinear => resize_bilinear(map.data(), map.height(), map.width(), 1, target_h, target_w, policy)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect(),
        ResizeMode::Nearest => {
            let xs: Vec<usize> = (0..target_w).map(|x| nearest_src(x, target_w, map.width())).collect();
            (0..target_h)
                .flat_map(|y| {
                    let sy = nearest_src(y, target_h, map.height());
                    xs.iter().map(move |&sx| map.get(sy, sx))
                })
                .collect()
        }
    };
    SaliencyMap::new(target_h, target_w, data)
}

/// Uniform objectness; 1.0 reproduces "guidance off" for foreground classes.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSaliency(pub f32);

impl SaliencyProvider for ConstantSaliency {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Constant
    }

    fn raw_saliency(&self, request: SaliencyRequest<'_>) -> Result<SaliencyMap> {
        SaliencyMap::uniform(request.image.height(), request.image.width(), self.0)
    }
}

/// A directory with one map per image key: `<key>.cdiy` or `<key>.png`.
#[derive(Debug, Clone)]
pub struct DirectorySaliency {
    dir: PathBuf,
}

impl DirectorySaliency {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl SaliencyProvider for DirectorySaliency {
    fn name(&self) -> String {
        format!("dir({})", self.dir.display())
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::FileBased
    }

    fn raw_saliency(&self, request: SaliencyRequest<'_>) -> Result<SaliencyMap> {
        for ext in ["cdiy", "png"] {
            let path = self.dir.join(format!("{}.{ext}", request.key));
            if path.is_file() {
                return read_saliency_file(&path);
            }
        }
        Err(Error::Miss(format!(
            "saliency for {:?} in {}",
            request.key,
            self.dir.display()
        )))
    }
}

/// Reads a saliency map from a CDIY file or an 8-bit grayscale PNG (value / 255).
pub fn read_saliency_file(path: &Path) -> Result<SaliencyMap> {
    let is_cdiy = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("cdiy"));
    if is_cdiy {
        return read_tensor(path)?.into_saliency();
    }
    let img = image::open(path).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let data = gray.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    SaliencyMap::new(gray.height() as usize, gray.width() as usize, data)
}

/// Scored binary instance masks from a class-agnostic instance segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMaskSet {
    height: usize,
    width: usize,
    masks: Vec<Vec<bool>>,
    scores: Vec<f64>,
}

impl InstanceMaskSet {
    pub fn new(height: usize, width: usize, masks: Vec<Vec<bool>>, scores: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("mask size {height}x{width}")));
        }
        if masks.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} masks but {} scores",
                masks.len(),
                scores.len()
            )));
        }
        if let Some(i) = masks.iter().position(|m| m.len() != height * width) {
            return Err(Error::Shape(format!(
                "mask {i} has {} pixels, expected {}",
                masks[i].len(),
                height * width
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!("mask score {s} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            masks,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of masks whose score reaches `threshold`.
    pub fn surviving(&self, threshold: f64) -> usize {
        self.scores.iter().filter(|&&s| s >= threshold).count()
    }

    /// Loads a directory of binary mask PNGs plus `scores.txt` (one score per
    /// line, aligned with the PNG files in sorted filename order).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read_err = |source| Error::Read {
            path: dir.to_path_buf(),
            source,
        };
        let mut pngs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(read_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        pngs.sort();
        let scores_path = dir.join("scores.txt");
        let text = std::fs::read_to_string(&scores_path).map_err(|source| Error::Read {
            path: scores_path.clone(),
            source,
        })?;
        let scores = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::Validation(format!("{}: bad score {l:?}: {e}", scores_path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != pngs.len() {
            return Err(Error::Validation(format!(
                "{}: {} masks but {} scores",
                dir.display(),
                pngs.len(),
                scores.len()
            )));
        }
        if pngs.is_empty() {
            return Err(Error::Validation(format!("{}: no masks", dir.display())));
        }
        let mut size = None;
        let mut masks = Vec::with_capacity(pngs.len());
        for p in &pngs {
            let img = image::open(p)
                .map_err(|e| Error::Codec {
                    path: p.clone(),
                    detail: e.to_string(),
                })?
                .to_luma8();
            let dims = (img.height() as usize, img.width() as usize);
            if *size.get_or_insert(dims) != dims {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, other masks are {:?}",
                    p.display(),
                    dims.0,
                    dims.1,
                    size
                )));
            }
            masks.push(img.as_raw().iter().map(|&v| v > 0).collect());
        }
        let (h, w) = size.expect("at least one mask");
        Self::new(h, w, masks, scores)
    }
}

/// Merges scored instance masks into one saliency map.
///
/// Masks scoring below `threshold` are dropped; the rest are summed weighted
/// by their score and divided by the per-image maximum of that sum, so the
/// most salient pixel is exactly 1. With no surviving mask the map is zero.
///
/// Scores lie in `[threshold, 1]` after filtering, so every score is an exact
/// multiple of 2^-55 (for `threshold >= 0.25`) and the weighted sums are
/// accumulated exactly in fixed point. Each pixel is the correctly rounded
/// quotient of two exact sums, which makes the result independent of mask
/// order and of any common rescaling of the scores that is itself exact.
pub fn aggregate_instance_masks(set: &InstanceMaskSet, threshold: f64) -> Result<SaliencyMap> {
    if !(threshold.is_finite() && threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("mask threshold {threshold} outside (0, 1]")));
    }
    let n = set.height * set.width;
    let kept: Vec<usize> = (0..set.len()).filter(|&i| set.scores[i] >= threshold).collect();
    if kept.is_empty() {
        return SaliencyMap::uniform(set.height, set.width, 0.0);
    }
    // scores >= 2^-k need at most 53 + k fractional bits
    let frac_bits = 53 + (-threshold.log2().floor()) as i32;
    if frac_bits > 110 {
        return Err(Error::Config(format!("mask threshold {threshold} too small")));
    }
    let unit = 2f64.powi(frac_bits);
    let weights: Vec<i128> = kept.iter().map(|&i| (set.scores[i] * unit) as i128).collect();
    let mut sums = vec![0i128; n];
    for (&i, &w) in kept.iter().zip(&weights) {
        for (s, &on) in sums.iter_mut().zip(&set.masks[i]) {
            if on {
                *s += w;
            }
        }
    }
    let z = *sums.iter().max().expect("non-empty map");
    if z == 0 {
        return SaliencyMap::uniform(set.height, set.width, 0.0);
    }
    let data = sums.iter().map(|&s| quotient(s, z) as f32).collect();
    SaliencyMap::new(set.height, set.width, data)
}

/// `num / den` rounded once to the nearest f64.
fn quotient(num: i128, den: i128) -> f64 {
    const EXACT: i128 = 1 << f64::MANTISSA_DIGITS;
    if num.abs() <= EXACT && den.abs() <= EXACT {
        return num as f64 / den as f64;
    }
    BigRational::new(BigInt::from(num), BigInt::from(den))
        .to_f64()
        .expect("finite quotient")
}

/// Class weights from objectness: `1 - Θ` for background (class 0), `Θ` for
/// every other class.
pub fn objectness_weights(theta: &SaliencyMap, classes: usize) -> Result<ScoreMap> {
    if classes < 2 {
        return Err(Error::Shape(format!("need background plus one class, got {classes}")));
    }
    let mut data = Vec::with_capacity(theta.data().len() * classes);
    for &t in theta.data() {
        data.push(1.0 - t);
        data.extend(std::iter::repeat_n(t, classes - 1));
    }
    ScoreMap::new(theta.height(), theta.width(), classes, data)
}

/// Weights of one everywhere: fusion without objectness guidance.
pub fn uniform_weights(height: usize, width: usize, classes: usize) -> Result<ScoreMap> {
    ScoreMap::filled(height, width, classes, 1.0)
}
