//! Naive per-pixel reference for the whole segment pipeline.
//!
//! Everything is recomputed from scratch for each output pixel: the grid
//! geometry, the window crops, the similarity of the (at most four) coarse
//! cells around the pixel, the scale mean, the objectness weight and the
//! softmax. Intermediate values are rounded to f32 where the engine stores
//! them, so labels can be compared exactly.

use ovseg_core::encoders::{ImageEncoder, Patch, StubEncoder, TextEncoder};
use ovseg_core::fusion::Ablation;
use ovseg_core::partition::Window;
use ovseg_core::tensor::{ImageTensor, SaliencyMap};

pub struct OracleInput<'a> {
    pub image: &'a ImageTensor,
    /// Class names, background first.
    pub names: &'a [String],
    pub patch_sizes: &'a [usize],
    pub global_scale0: bool,
    pub logit_scale: f64,
    /// Objectness at any resolution.
    pub theta: &'a SaliencyMap,
    pub ablation: Ablation,
}

pub struct OracleOutput {
    pub probabilities: Vec<f32>,
    pub labels: Vec<u8>,
}

fn unit(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Source coordinate sampled by output index `d` under half-pixel centres.
fn source_coord(d: usize, dst: usize, src: usize) -> (usize, usize, f64) {
    let s = (d as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    let s = s.max(0.0).min((src - 1) as f64);
    let i0 = s.floor() as usize;
    (i0, (i0 + 1).min(src - 1), s - i0 as f64)
}

fn mix(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn bilinear(get: impl Fn(usize, usize) -> f64, y: usize, x: usize, dst: (usize, usize), src: (usize, usize)) -> f64 {
    let (y0, y1, ty) = source_coord(y, dst.0, src.0);
    let (x0, x1, tx) = source_coord(x, dst.1, src.1);
    mix(mix(get(y0, x0), get(y0, x1), tx), mix(get(y1, x0), get(y1, x1), tx), ty)
}

fn crop(image: &ImageTensor, win: Window, size: usize) -> ImageTensor {
    let mut data = Vec::with_capacity(size * size * 3);
    for v in 0..size {
        for u in 0..size {
            for c in 0..3 {
                let get = |yy: usize, xx: usize| f64::from(image.pixel(win.y + yy, win.x + xx)[c]);
                data.push(bilinear(get, v, u, (size, size), (win.height, win.width)) as f32);
            }
        }
    }
    ImageTensor::new(size, size, data).expect("crop stays in range")
}

struct Scale {
    cell: usize,
    rows: usize,
    cols: usize,
    global: bool,
}

impl Scale {
    fn window(&self, r: usize, c: usize, h: usize, w: usize) -> Window {
        if self.global {
            return Window {
                x: 0,
                y: 0,
                width: w,
                height: h,
            };
        }
        let (y, x) = (r * self.cell, c * self.cell);
        Window {
            x,
            y,
            width: self.cell.min(w - x),
            height: self.cell.min(h - y),
        }
    }
}

pub fn reference(input: &OracleInput<'_>, encoder: &StubEncoder) -> OracleOutput {
    let image = input.image;
    let (h, w) = (image.height(), image.width());
    let t = input.names.len();
    let text: Vec<Vec<f32>> = input
        .names
        .iter()
        .map(|n| unit(&encoder.encode_text(&format!("a photo of a {n}")).unwrap()))
        .collect();

    let sizes: Vec<usize> = match input.ablation {
        Ablation::NoMultiscale => input.patch_sizes[..1].to_vec(),
        _ => input.patch_sizes.to_vec(),
    };
    let scales: Vec<Scale> = sizes
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let global = i == 0 && input.global_scale0;
            let cell = if global { h.max(w) } else { p };
            Scale {
                cell,
                rows: h.div_ceil(cell),
                cols: w.div_ceil(cell),
                global,
            }
        })
        .collect();

    // coarse scores per scale, memoized by cell
    let coarse: Vec<Vec<Vec<f32>>> = scales
        .iter()
        .map(|s| {
            let mut cells = Vec::new();
            for r in 0..s.rows {
                for c in 0..s.cols {
                    let win = s.window(r, c, h, w);
                    let patch = Patch {
                        pixels: crop(image, win, encoder.input_size()),
                        image_key: String::new(),
                        window: win,
                        index: 0,
                    };
                    let e = unit(&encoder.encode_image(&patch).unwrap());
                    cells.push(
                        text.iter()
                            .map(|tr| (dot(&e, tr).clamp(-1.0, 1.0) * input.logit_scale) as f32)
                            .collect(),
                    );
                }
            }
            cells
        })
        .collect();

    let theta = input.theta;
    let mut probabilities = Vec::with_capacity(h * w * t);
    let mut labels = Vec::with_capacity(h * w);
    let mut logits = vec![0.0f64; t];
    for y in 0..h {
        for x in 0..w {
            let th = if theta.height() == h && theta.width() == w {
                theta.get(y, x)
            } else {
                let get = |yy: usize, xx: usize| f64::from(theta.get(yy, xx));
                (bilinear(get, y, x, (h, w), (theta.height(), theta.width())) as f32).clamp(0.0, 1.0)
            };
            for (k, logit) in logits.iter_mut().enumerate() {
                let per_scale: Vec<f64> = scales
                    .iter()
                    .zip(&coarse)
                    .map(|(s, cells)| {
                        let get = |r: usize, c: usize| f64::from(cells[r * s.cols + c][k]);
                        f64::from(bilinear(get, y, x, (h, w), (s.rows, s.cols)) as f32)
                    })
                    .collect();
                let mean = (per_scale.iter().sum::<f64>() / per_scale.len() as f64) as f32;
                let weight = match input.ablation {
                    Ablation::NoObjectness => 1.0f32,
                    _ if k == 0 => 1.0f32 - th,
                    _ => th,
                };
                *logit = f64::from(mean) * f64::from(weight);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let p: Vec<f32> = exps.iter().map(|e| (e / z) as f32).collect();
            let mut best = 0;
            for k in 1..t {
                if p[k] > p[best] {
                    best = k;
                }
            }
            labels.push(best as u8);
            probabilities.extend(p);
        }
    }
    OracleOutput { probabilities, labels }
}
