//! Value types shared by every stage of the engine.
//!
//! All buffers are row-major. Multi-channel maps interleave channels, so the
//! value for pixel `(y, x)` and channel `c` lives at `(y * width + x) * channels + c`.

use crate::error::{Error, Result};

/// Ground-truth sentinel for pixels excluded from evaluation.
pub const IGNORE_INDEX: u8 = 255;

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

/// An RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// An image where every pixel has the same color.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * Self::CHANNELS)
            .collect();
        Self::new(height, width, data)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Per-channel mean over all pixels.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(Self::CHANNELS) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += f64::from(v);
            }
        }
        let n = (self.height * self.width) as f64;
        acc.map(|a| a / n)
    }

    /// SHA-256 over the dimensions and little-endian pixel values. Used as the
    /// content key for precomputed embeddings.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Per-pixel, per-class real-valued map (`height × width × classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if classes == 0 {
            return Err(Error::Shape("score map needs at least one class".into()));
        }
        if data.len() != height * width * classes {
            return Err(Error::Shape(format!(
                "score map {height}x{width}x{classes} needs {} values, got {}",
                height * width * classes,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("score map contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, value: f32) -> Result<Self> {
        Self::new(height, width, classes, vec![value; height * width * classes])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, class: usize) -> f32 {
        self.data[(y * self.width + x) * self.classes + class]
    }

    /// All class values at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.classes;
        &self.data[i..i + self.classes]
    }

    /// Class values of each pixel, in row-major pixel order.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.classes)
    }

    /// One class plane as a row-major `height × width` buffer.
    pub fn channel(&self, class: usize) -> Vec<f32> {
        self.pixels().map(|px| px[class]).collect()
    }

    pub fn same_shape(&self, other: &ScoreMap) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }
}

/// Per-pixel objectness in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn uniform(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel class indices; `ignore_index` marks pixels without a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
    ignore_index: u8,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_ignore(height, width, data, IGNORE_INDEX)
    }

    pub fn with_ignore(height: usize, width: usize, data: Vec<u8>, ignore_index: u8) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            ignore_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Checks that every labelled pixel refers to one of `classes` classes.
    pub fn validate_classes(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != self.ignore_index && usize::from(v) >= classes)
        {
            Some(v) => Err(Error::Validation(format!(
                "label {v} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }

    /// Nearest-neighbour resize, so no new label values are introduced.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<LabelMap> {
        check_dims(height, width)?;
        let ys: Vec<usize> = (0..height).map(|y| nearest_src(y, height, self.height)).collect();
        let xs: Vec<usize> = (0..width).map(|x| nearest_src(x, width, self.width)).collect();
        let mut data = Vec::with_capacity(height * width);
        for &sy in &ys {
            data.extend(xs.iter().map(|&sx| self.data[sy * self.width + sx]));
        }
        LabelMap::with_ignore(height, width, data, self.ignore_index)
    }
}

/// Source index whose pixel centre is nearest to the centre of `dst`.
pub(crate) fn nearest_src(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale).floor() as usize;
    s.min(src_len - 1)
}
