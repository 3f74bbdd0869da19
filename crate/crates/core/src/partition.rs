//! Multi-scale partitioning of an image into patch windows, and the way back:
//! scattering per-window scores onto the grid and upsampling to image size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::resize::{resize_bilinear, resize_window};
use crate::tensor::{ImageTensor, ScoreMap};

pub const DEFAULT_PATCH_SIZES: [usize; 3] = [256, 128, 64];
pub const MIN_PATCH_SIZE: usize = 8;

/// A pixel rectangle inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.height).contains(&y) && (self.x..self.x + self.width).contains(&x)
    }
}

/// Patch sizes of the scale pyramid, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleConfig {
    patch_sizes: Vec<usize>,
    /// Use one full-image window for scale 0 regardless of its patch size.
    global_scale0: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            patch_sizes: DEFAULT_PATCH_SIZES.to_vec(),
            global_scale0: false,
        }
    }
}

impl ScaleConfig {
    /// Patch sizes must be non-empty, strictly decreasing and at least 8 px.
    pub fn new(patch_sizes: Vec<usize>, global_scale0: bool) -> Result<Self> {
        if patch_sizes.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if let Some(p) = patch_sizes.iter().find(|&&p| p < MIN_PATCH_SIZE) {
            return Err(Error::Config(format!(
                "patch size {p} below the minimum of {MIN_PATCH_SIZE}"
            )));
        }
        if patch_sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "patch sizes {patch_sizes:?} must be strictly decreasing"
            )));
        }
        Ok(Self {
            patch_sizes,
            global_scale0,
        })
    }

    pub fn patch_sizes(&self) -> &[usize] {
        &self.patch_sizes
    }

    pub fn global_scale0(&self) -> bool {
        self.global_scale0
    }

    pub fn len(&self) -> usize {
        self.patch_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patch_sizes.is_empty()
    }

    /// Only the coarsest scale.
    pub fn coarsest(&self) -> ScaleConfig {
        Self {
            patch_sizes: vec![self.patch_sizes[0]],
            global_scale0: self.global_scale0,
        }
    }

    /// One grid per scale for an image of the given size.
    pub fn grids(&self, height: usize, width: usize) -> Result<Vec<PatchGrid>> {
        self.patch_sizes
            .iter()
            .enumerate()
            .map(|(s, &p)| {
                let grid = if s == 0 && self.global_scale0 {
                    PatchGrid::global(height, width)?
                } else {
                    PatchGrid::new(height, width, p)?
                };
                Ok(grid.with_scale_index(s))
            })
            .collect()
    }
}

/// The partition of one image at one scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    scale_index: usize,
    patch_size: usize,
    image_height: usize,
    image_width: usize,
    rows: usize,
    cols: usize,
    windows: Vec<Window>,
}

impl PatchGrid {
    /// Partitions an image into `⌈H/P⌉ × ⌈W/P⌉` windows in row-major order.
    /// The last row and column are clipped to the image border.
    pub fn new(height: usize, width: usize, patch_size: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("cannot grid a {height}x{width} image")));
        }
        if patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        let rows = height.div_ceil(patch_size);
        let cols = width.div_ceil(patch_size);
        let mut windows = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let y = r * patch_size;
            let h = patch_size.min(height - y);
            for c in 0..cols {
                let x = c * patch_size;
                windows.push(Window {
                    x,
                    y,
                    width: patch_size.min(width - x),
                    height: h,
                });
            }
        }
        Ok(Self {
            scale_index: 0,
            patch_size,
            image_height: height,
            image_width: width,
            rows,
            cols,
            windows,
        })
    }

    /// A single window covering the whole image.
    pub fn global(height: usize, width: usize) -> Result<Self> {
        let mut grid = Self::new(height, width, height.max(width))?;
        grid.patch_size = 0;
        Ok(grid)
    }

    pub fn with_scale_index(mut self, scale_index: usize) -> Self {
        self.scale_index = scale_index;
        self
    }

    pub fn scale_index(&self) -> usize {
        self.scale_index
    }

    /// Nominal patch size; 0 for a global window.
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Crops every window and resizes it to `encoder_input × encoder_input`.
/// Remainder windows at the border are stretched anisotropically.
pub fn extract_patches(
    image: &ImageTensor,
    grid: &PatchGrid,
    encoder_input: usize,
    policy: ExecPolicy,
) -> Result<Vec<ImageTensor>> {
    if grid.image_size() != (image.height(), image.width()) {
        return Err(Error::Shape(format!(
            "grid built for {:?}, image is {}x{}",
            grid.image_size(),
            image.height(),
            image.width()
        )));
    }
    if encoder_input == 0 {
        return Err(Error::Config("encoder input size must be positive".into()));
    }
    policy.try_map(grid.windows(), |_, w| {
        let data = resize_window(
            image.data(),
            image.width(),
            ImageTensor::CHANNELS,
            (w.x, w.y, w.width, w.height),
            encoder_input,
            encoder_input,
        );
        ImageTensor::new(encoder_input, encoder_input, data)
    })
}

/// Places the score vector of window `i` at its grid cell.
pub fn scatter_scores(grid: &PatchGrid, per_patch: &[Vec<f32>]) -> Result<ScoreMap> {
    if per_patch.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} score vectors for {} windows",
            per_patch.len(),
            grid.len()
        )));
    }
    let classes = per_patch[0].len();
    if let Some((i, v)) = per_patch.iter().enumerate().find(|(_, v)| v.len() != classes) {
        return Err(Error::Shape(format!(
            "window {i} has {} scores, expected {classes}",
            v.len()
        )));
    }
    // windows are stored row-major, so concatenation is the cell layout
    let data = per_patch.concat();
    ScoreMap::new(grid.rows(), grid.cols(), classes, data)
}

/// Bilinear upsampling of every class plane to `target_h × target_w`.
pub fn upsample_bilinear(coarse: &ScoreMap, target_h: usize, target_w: usize, policy: ExecPolicy) -> Result<ScoreMap> {
    let data = resize_bilinear(
        coarse.data(),
        coarse.height(),
        coarse.width(),
        coarse.classes(),
        target_h,
        target_w,
        policy,
    );
    ScoreMap::new(target_h, target_w, coarse.classes(), data)
}
