//! Separable bilinear resampling with half-pixel centres.
//!
//! Output pixel `d` samples source coordinate `(d + 0.5) * (src / dst) - 0.5`,
//! clamped to `[0, src - 1]`. Corners are not aligned. Arithmetic is done in
//! f64 and every interpolated value stays within the range of its neighbours.

use crate::exec::ExecPolicy;

/// Interpolation taps along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub t: f64,
}

pub(crate) fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                t: s - lo as f64,
            }
        })
        .collect()
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Resizes an interleaved `height × width × channels` buffer.
pub fn resize_bilinear(
    src: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    dst_height: usize,
    dst_width: usize,
    policy: ExecPolicy,
) -> Vec<f32> {
    debug_assert_eq!(src.len(), height * width * channels);
    let ys = taps(height, dst_height);
    let xs = taps(width, dst_width);
    let row_len = dst_width * channels;
    let mut out = vec![0.0f32; dst_height * row_len];
    policy.for_each_chunk_mut(&mut out, row_len.max(1), |y, row| {
        let ty = ys[y];
        let top = &src[ty.lo * width * channels..(ty.lo + 1) * width * channels];
        let bottom = &src[ty.hi * width * channels..(ty.hi + 1) * width * channels];
        for (x, tx) in xs.iter().enumerate() {
            for c in 0..channels {
                let a = f64::from(top[tx.lo * channels + c]);
                let b = f64::from(top[tx.hi * channels + c]);
                let p = f64::from(bottom[tx.lo * channels + c]);
                let q = f64::from(bottom[tx.hi * channels + c]);
                let v = lerp(lerp(a, b, tx.t), lerp(p, q, tx.t), ty.t);
                row[x * channels + c] = v as f32;
            }
        }
    });
    out
}

/// Crops the `w × h` window at `(x, y)` and resizes it to `dst_h × dst_w`.
pub(crate) fn resize_window(
    src: &[f32],
    width: usize,
    channels: usize,
    window: (usize, usize, usize, usize),
    dst_height: usize,
    dst_width: usize,
) -> Vec<f32> {
    let (x0, y0, w, h) = window;
    let ys = taps(h, dst_height);
    let xs = taps(w, dst_width);
    let mut out = Vec::with_capacity(dst_height * dst_width * channels);
    let at = |y: usize, x: usize, c: usize| f64::from(src[((y0 + y) * width + x0 + x) * channels + c]);
    for ty in &ys {
        for tx in &xs {
            for c in 0..channels {
                let top = lerp(at(ty.lo, tx.lo, c), at(ty.lo, tx.hi, c), tx.t);
                let bottom = lerp(at(ty.hi, tx.lo, c), at(ty.hi, tx.hi, c), tx.t);
                out.push(lerp(top, bottom, ty.t) as f32);
            }
        }
    }
    out
}
