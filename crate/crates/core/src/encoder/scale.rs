//! Average downscaling and bilinear upscaling between the full-resolution
//! image and its coarse counterpart.

use ndarray::Array3;

use crate::error::{Result, SpicError};
use crate::types::{CoarseImage, Image};

/// Shrinks an image by an integer factor; each output pixel is the arithmetic
/// mean of its `factor x factor` block, per channel.
pub fn downscale_average(x: &Image, factor: usize) -> Result<CoarseImage> {
    if factor == 0 {
        return Err(SpicError::InvalidConfig("factor must be >= 1".into()));
    }
    let (h, w) = (x.height(), x.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(SpicError::NotDivisible {
            height: h,
            width: w,
            factor,
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let src = x.data();
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Array3::<f64>::zeros((3, oh, ow));
    for c in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += src[[c, oy * factor + dy, ox * factor + dx]];
                    }
                }
                out[[c, oy, ox]] = acc * norm;
            }
        }
    }
    CoarseImage::new(out)
}

/// Expands a coarse image back to `factor x` size with bilinear
/// interpolation (pixel-center convention, edge-clamped).
pub fn upscale_coarse(c: &CoarseImage, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(SpicError::InvalidConfig("factor must be >= 1".into()));
    }
    let data = upscale_bilinear_raw(c.data(), factor);
    Image::new(data)
}

/// Bilinear upscale on raw channel-first data. Interpolation of in-range
/// values stays in range, so no clipping is needed.
pub fn upscale_bilinear_raw(src: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (ch, sh, sw) = src.dim();
    let (oh, ow) = (sh * factor, sw * factor);
    let mut out = Array3::<f64>::zeros((ch, oh, ow));
    for y in 0..oh {
        let (y0, y1, fy) = source_span(y, factor, sh);
        for x in 0..ow {
            let (x0, x1, fx) = source_span(x, factor, sw);
            for c in 0..ch {
                let a = src[[c, y0, x0]];
                let b = src[[c, y0, x1]];
                let d = src[[c, y1, x0]];
                let e = src[[c, y1, x1]];
                out[[c, y, x]] = a * (1.0 - fy) * (1.0 - fx)
                    + b * (1.0 - fy) * fx
                    + d * fy * (1.0 - fx)
                    + e * fy * fx;
            }
        }
    }
    out
}

/// Neighboring source indices and interpolation weight for destination index
/// `d` on an axis upscaled by `factor` (source length `src`).
fn source_span(d: usize, factor: usize, src: usize) -> (usize, usize, f64) {
    let u = (d as f64 + 0.5) / factor as f64 - 0.5;
    let floor = u.floor();
    let frac = u - floor;
    let i0 = (floor as isize).clamp(0, src as isize - 1) as usize;
    let i1 = (floor as isize + 1).clamp(0, src as isize - 1) as usize;
    (i0, i1, frac)
}
