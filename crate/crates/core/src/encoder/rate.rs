//! Bits-per-pixel accounting for a compressed bitstream.

use serde::Serialize;

use crate::encoder::container::HEADER_LEN;

/// Rate breakdown, all in bits per full-resolution pixel.
///
/// `bpp_total` is defined as the sum of the three components, so the sum
/// identity holds bit-exactly in floating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    pub width: usize,
    pub height: usize,
    pub ssm_bytes: usize,
    pub coarse_bytes: usize,
    pub header_bytes: usize,
    pub bpp_ssm: f64,
    pub bpp_coarse: f64,
    pub bpp_header: f64,
    pub bpp_total: f64,
}

pub fn compute_rate(
    ssm_bytes: usize,
    coarse_bytes: usize,
    width: usize,
    height: usize,
) -> RateReport {
    assert!(width > 0 && height > 0, "rate is per pixel; need pixels");
    let pixels = (width * height) as f64;
    let bpp = |bytes: usize| 8.0 * bytes as f64 / pixels;
    let (bpp_ssm, bpp_coarse, bpp_header) =
        (bpp(ssm_bytes), bpp(coarse_bytes), bpp(HEADER_LEN));
    RateReport {
        width,
        height,
        ssm_bytes,
        coarse_bytes,
        header_bytes: HEADER_LEN,
        bpp_ssm,
        bpp_coarse,
        bpp_header,
        bpp_total: bpp_ssm + bpp_coarse + bpp_header,
    }
}
