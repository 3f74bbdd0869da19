//! Result artifacts: indexed label PNGs, overlay renders, run-length masks,
//! and image loading.

use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LabelMap};

/// iTXt keyword under which run metadata is stored in written PNGs.
pub const METADATA_KEY: &str = "ovseg";

/// Opacity of class colours in overlays, out of 256.
const OVERLAY_ALPHA: u32 = 128;

/// 256 RGB entries, indexed by class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    /// The PASCAL VOC colour map.
    pub fn voc() -> Self {
        let colors = (0..256u32)
            .map(|i| {
                let mut rgb = [0u8; 3];
                let mut c = i;
                for shift in (0..8).rev() {
                    for (ch, v) in rgb.iter_mut().enumerate() {
                        *v |= (((c >> ch) & 1) as u8) << shift;
                    }
                    c >>= 3;
                }
                rgb
            })
            .collect();
        Self { colors }
    }

    /// Parses one colour per line, `#rrggbb` or `r g b`. Missing entries
    /// are filled from the VOC map.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = Self::voc().colors;
        let lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("//"));
        for (i, line) in lines.enumerate() {
            if i >= colors.len() {
                return Err(Error::Config("palette has more than 256 entries".into()));
            }
            colors[i] = parse_color(line)
                .ok_or_else(|| Error::Config(format!("palette line {}: bad colour {line:?}", i + 1)))?;
        }
        Ok(Self { colors })
    }

    pub fn color(&self, index: u8) -> [u8; 3] {
        self.colors[usize::from(index)]
    }

    fn plte(&self) -> Vec<u8> {
        self.colors.iter().flatten().copied().collect()
    }
}

impl Default for Palette {
    fn default() -> Self {
        Self::voc()
    }
}

fn parse_color(line: &str) -> Option<[u8; 3]> {
    if let Some(hex) = line.strip_prefix('#') {
        if hex.len() != 6 {
            return None;
        }
        let c = |i: usize| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok();
        return Some([c(0)?, c(2)?, c(4)?]);
    }
    let parts: Vec<u8> = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    parts.try_into().ok()
}

/// Decodes an image file into `[0,1]` RGB.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    ImageTensor::from_rgb8(&img.to_rgb8())
}

/// Decodes in-memory image bytes into `[0,1]` RGB.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Codec {
        path: "<memory>".into(),
        detail: e.to_string(),
    })?;
    ImageTensor::from_rgb8(&img.to_rgb8())
}

/// Indexed 8-bit PNG of a label map with `palette` and optional metadata.
pub fn encode_label_png(labels: &LabelMap, palette: &Palette, metadata: Option<&str>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, dim_u32(labels.width())?, dim_u32(labels.height())?);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette.plte());
        write_png(enc, labels.data(), metadata)?;
    }
    Ok(out)
}

/// RGB PNG from an interleaved 8-bit buffer.
pub fn encode_rgb_png(width: usize, height: usize, rgb: &[u8], metadata: Option<&str>) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!("{} bytes for {height}x{width} RGB", rgb.len())));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, dim_u32(width)?, dim_u32(height)?);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        write_png(enc, rgb, metadata)?;
    }
    Ok(out)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} too large for PNG")))
}

fn write_png<W: std::io::Write>(mut enc: png::Encoder<'_, W>, data: &[u8], metadata: Option<&str>) -> Result<()> {
    let codec = |e: png::EncodingError| Error::Codec {
        path: "<png>".into(),
        detail: e.to_string(),
    };
    if let Some(text) = metadata {
        enc.add_itxt_chunk(METADATA_KEY.to_string(), text.to_string())
            .map_err(codec)?;
    }
    let mut writer = enc.write_header().map_err(codec)?;
    writer.write_image_data(data).map_err(codec)?;
    writer.finish().map_err(codec)
}

/// A decoded label PNG plus any run metadata it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub labels: LabelMap,
    pub metadata: Option<String>,
}

/// Reads class indices from an 8-bit indexed or grayscale PNG. Palette
/// entries are not applied: the stored index is the class.
pub fn read_label_png(path: &Path) -> Result<LabelImage> {
    let file = File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_label_png_from(BufReader::new(file)).map_err(|detail| Error::Codec {
        path: path.to_path_buf(),
        detail,
    })
}

pub fn decode_label_png(bytes: &[u8]) -> Result<LabelImage> {
    decode_label_png_from(Cursor::new(bytes)).map_err(|detail| Error::Codec {
        path: "<memory>".into(),
        detail,
    })
}

fn decode_label_png_from<R: std::io::BufRead + std::io::Seek>(r: R) -> std::result::Result<LabelImage, String> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(format!(
            "label maps must be 8-bit indexed or grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        data.extend_from_slice(&row[..w]);
    }
    let metadata = reader
        .info()
        .utf8_text
        .iter()
        .find(|c| c.keyword == METADATA_KEY)
        .and_then(|c| c.get_text().ok());
    let labels = LabelMap::new(h, w, data).map_err(|e| e.to_string())?;
    Ok(LabelImage { labels, metadata })
}

/// Blends class colours over the image and appends a legend strip listing
/// every class. Returns `(height, width, rgb)`.
pub fn render_overlay(
    image: &ImageTensor,
    labels: &LabelMap,
    class_names: &[String],
    palette: &Palette,
) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = (image.height(), image.width());
    if (labels.height(), labels.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "labels {}x{} for image {h}x{w}",
            labels.height(),
            labels.width()
        )));
    }
    let base = image.to_rgb8();
    let layout = legend_layout(class_names, w);
    let strip_h = layout.last().map_or(0, |e| e.y + LEGEND_ROW);
    let mut out = vec![255u8; w * (h + strip_h) * 3];
    for ((px, src), &label) in out.chunks_exact_mut(3).zip(base.pixels()).zip(labels.data()) {
        if label == labels.ignore_index() {
            px.copy_from_slice(&src.0);
            continue;
        }
        let c = palette.color(label);
        for ((o, &s), &c) in px.iter_mut().zip(&src.0).zip(&c) {
            *o = ((u32::from(s) * (256 - OVERLAY_ALPHA) + u32::from(c) * OVERLAY_ALPHA + 128) >> 8) as u8;
        }
    }
    let mut canvas = Canvas {
        buf: &mut out,
        width: w,
        height: h + strip_h,
    };
    for (i, entry) in layout.iter().enumerate() {
        let y = h + entry.y + 2;
        canvas.fill(entry.x, y, SWATCH, SWATCH, palette.color(i as u8));
        canvas.text(entry.x + SWATCH + 3, y, &class_names[i], [0, 0, 0]);
    }
    Ok((h + strip_h, w, out))
}

const SWATCH: usize = 10;
const GLYPH_SCALE: usize = 2;
const GLYPH_ADVANCE: usize = 4 * GLYPH_SCALE;
const LEGEND_ROW: usize = 14;

struct LegendEntry {
    x: usize,
    y: usize,
}

fn legend_layout(names: &[String], width: usize) -> Vec<LegendEntry> {
    let (mut x, mut y) = (2, 0);
    names
        .iter()
        .map(|name| {
            let entry_w = SWATCH + 3 + name.chars().count() * GLYPH_ADVANCE + 8;
            if x > 2 && x + entry_w > width {
                x = 2;
                y += LEGEND_ROW;
            }
            let e = LegendEntry { x, y };
            x += entry_w;
            e
        })
        .collect()
}

struct Canvas<'a> {
    buf: &'a mut [u8],
    width: usize,
    height: usize,
}

impl Canvas<'_> {
    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.buf[i..i + 3].copy_from_slice(&c);
        }
    }

    fn fill(&mut self, x: usize, y: usize, w: usize, h: usize, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            let gx = x + i * GLYPH_ADVANCE;
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        self.fill(gx + col * GLYPH_SCALE, y + r * GLYPH_SCALE, GLYPH_SCALE, GLYPH_SCALE, c);
                    }
                }
            }
        }
    }
}

/// 3×5 bitmap glyphs; letters are case-folded.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c.to_ascii_uppercase() {
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '#' => [0b101, 0b111, 0b101, 0b111, 0b101],
        _ => return None,
    })
}

/// Binary mask as alternating run lengths, row-major, starting with a
/// (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl MaskRle {
    pub fn encode(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Shape(format!("{} mask values for {height}x{width}", mask.len())));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &m in mask {
            if m != current {
                counts.push(run);
                run = 0;
                current = m;
            }
            run += 1;
        }
        counts.push(run);
        Ok(Self {
            size: [height, width],
            counts,
        })
    }

    pub fn decode(&self) -> Result<Vec<bool>> {
        let n = self.size[0] * self.size[1];
        let total: u64 = self.counts.iter().sum();
        if total != n as u64 {
            return Err(Error::Validation(format!("RLE covers {total} pixels, size is {n}")));
        }
        let mut out = Vec::with_capacity(n);
        for (i, &c) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        Ok(out)
    }
}

/// Label map as runs of equal values, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRle {
    pub size: [usize; 2],
    pub values: Vec<u8>,
    pub lengths: Vec<u64>,
}

impl LabelRle {
    pub fn encode(labels: &LabelMap) -> Self {
        let mut values: Vec<u8> = Vec::new();
        let mut lengths: Vec<u64> = Vec::new();
        for &v in labels.data() {
            match values.last() {
                Some(&last) if last == v => *lengths.last_mut().expect("parallel vectors") += 1,
                _ => {
                    values.push(v);
                    lengths.push(1);
                }
            }
        }
        Self {
            size: [labels.height(), labels.width()],
            values,
            lengths,
        }
    }

    pub fn decode(&self) -> Result<LabelMap> {
        if self.values.len() != self.lengths.len() {
            return Err(Error::Validation("RLE values and lengths differ in count".into()));
        }
        let n = self.size[0] * self.size[1];
        let total: u64 = self.lengths.iter().sum();
        if total != n as u64 {
            return Err(Error::Validation(format!("RLE covers {total} pixels, size is {n}")));
        }
        let data = self
            .values
            .iter()
            .zip(&self.lengths)
            .flat_map(|(&v, &l)| std::iter::repeat_n(v, l as usize))
            .collect();
        LabelMap::new(self.size[0], self.size[1], data)
    }
}
