//! Lossy coarse-image codec.
//!
//! Codec id 0 is the self-contained reference coder: per-channel 8x8 block
//! DCT, uniform quantization whose step doubles every 6 quality points
//! (1 = near lossless, 51 = very coarse), and the adaptive range coder with
//! DC prediction from the previous block. Codec id 1 shells out to BPG.
//! The same machinery compresses full-resolution images for the classical
//! baseline curves in rate-distortion sweeps.

use ndarray::Array3;

use crate::encoder::dct::{self, BLOCK};
use crate::encoder::external;
use crate::encoder::range_coder::{
    zigzag_decode, zigzag_encode, BitModel, RangeDecoder, RangeEncoder, UintModel,
};
use crate::error::{Result, SpicError};
use crate::types::{CoarseImage, Image};

/// Which lossy coder produced a coarse payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseCodecId {
    Reference = 0,
    ExternalBpg = 1,
}

impl TryFrom<u8> for CoarseCodecId {
    type Error = SpicError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Reference),
            1 => Ok(Self::ExternalBpg),
            other => Err(SpicError::UnknownCodec(other)),
        }
    }
}

pub const QUALITY_MIN: u8 = 1;
pub const QUALITY_MAX: u8 = 51;

/// AC quantization step for a quality setting; doubles every 6 points.
fn ac_step(quality: u8) -> f64 {
    (5.0 / 2048.0) * (quality as f64 / 6.0).exp2()
}

/// DC is always quantized finely enough that flat areas survive any quality.
fn dc_step(quality: u8) -> f64 {
    ac_step(quality).min(0.04)
}

fn check_quality(quality: u8) -> Result<()> {
    if !(QUALITY_MIN..=QUALITY_MAX).contains(&quality) {
        return Err(SpicError::InvalidQuality(quality));
    }
    Ok(())
}

pub fn encode_coarse_lossy(c: &CoarseImage, quality: u8, codec: CoarseCodecId) -> Result<Vec<u8>> {
    check_quality(quality)?;
    match codec {
        CoarseCodecId::Reference => Ok(encode_planes(c.data(), quality)),
        CoarseCodecId::ExternalBpg => external::bpg_encode(c, quality),
    }
}

pub fn decode_coarse_lossy(
    payload: &[u8],
    height: usize,
    width: usize,
    quality: u8,
    codec: CoarseCodecId,
) -> Result<CoarseImage> {
    check_quality(quality)?;
    match codec {
        CoarseCodecId::Reference => {
            CoarseImage::new(decode_planes(payload, height, width, quality)?)
        }
        CoarseCodecId::ExternalBpg => external::bpg_decode(payload, height, width),
    }
}

/// Reference coder applied to a full-resolution image; used for the
/// classical-codec baseline in sweeps.
pub fn encode_image_lossy(x: &Image, quality: u8) -> Result<Vec<u8>> {
    check_quality(quality)?;
    Ok(encode_planes(x.data(), quality))
}

pub fn decode_image_lossy(
    payload: &[u8],
    height: usize,
    width: usize,
    quality: u8,
) -> Result<Image> {
    check_quality(quality)?;
    Image::new(decode_planes(payload, height, width, quality)?)
}

struct CoeffModels {
    dc_delta: UintModel,
    zero: Vec<BitModel>,
    magnitude: Vec<UintModel>,
}

const ZERO_BANDS: usize = 16;
const MAG_BANDS: usize = 8;

impl CoeffModels {
    fn new() -> Self {
        Self {
            dc_delta: UintModel::default(),
            zero: vec![BitModel::default(); ZERO_BANDS],
            magnitude: (0..MAG_BANDS).map(|_| UintModel::default()).collect(),
        }
    }
}

fn zero_band(pos: usize) -> usize {
    (pos / 4).min(ZERO_BANDS - 1)
}

fn mag_band(pos: usize) -> usize {
    (pos / 8).min(MAG_BANDS - 1)
}

/// Pads a plane to block multiples by edge replication and cuts it into
/// raster-order blocks.
fn plane_blocks(data: &Array3<f64>, channel: usize) -> (usize, usize, Vec<[f64; BLOCK * BLOCK]>) {
    let (_, h, w) = data.dim();
    let bh = h.div_ceil(BLOCK);
    let bw = w.div_ceil(BLOCK);
    let mut blocks = Vec::with_capacity(bh * bw);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0; BLOCK * BLOCK];
            for y in 0..BLOCK {
                let sy = (by * BLOCK + y).min(h - 1);
                for x in 0..BLOCK {
                    let sx = (bx * BLOCK + x).min(w - 1);
                    block[y * BLOCK + x] = data[[channel, sy, sx]];
                }
            }
            blocks.push(block);
        }
    }
    (bh, bw, blocks)
}

fn encode_planes(data: &Array3<f64>, quality: u8) -> Vec<u8> {
    let (channels, _, _) = data.dim();
    let order = dct::zigzag_order();
    let (dc_q, ac_q) = (dc_step(quality), ac_step(quality));
    let mut enc = RangeEncoder::new();
    for c in 0..channels {
        let mut models = CoeffModels::new();
        let (_, _, blocks) = plane_blocks(data, c);
        let mut prev_dc: i64 = 0;
        for block in &blocks {
            let coeffs = dct::forward(block);
            let dc = (coeffs[0] / dc_q).round() as i64;
            models
                .dc_delta
                .encode(&mut enc, zigzag_encode(dc - prev_dc));
            prev_dc = dc;
            for pos in 1..BLOCK * BLOCK {
                let q = (coeffs[order[pos]] / ac_q).round() as i64;
                let zero = q == 0;
                let band = zero_band(pos);
                enc.encode_bit(&mut models.zero[band], !zero);
                if !zero {
                    enc.encode_raw_bit(q < 0);
                    models.magnitude[mag_band(pos)].encode(&mut enc, q.unsigned_abs() - 1);
                }
            }
        }
    }
    enc.finish()
}

fn decode_planes(payload: &[u8], height: usize, width: usize, quality: u8) -> Result<Array3<f64>> {
    if height == 0 || width == 0 {
        return Err(SpicError::CorruptPayload("zero-sized image".into()));
    }
    let order = dct::zigzag_order();
    let (dc_q, ac_q) = (dc_step(quality), ac_step(quality));
    let bh = height.div_ceil(BLOCK);
    let bw = width.div_ceil(BLOCK);
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Array3::<f64>::zeros((3, height, width));
    for c in 0..3 {
        let mut models = CoeffModels::new();
        let mut prev_dc: i64 = 0;
        for b in 0..bh * bw {
            let mut coeffs = [0.0; BLOCK * BLOCK];
            let delta = zigzag_decode(models.dc_delta.decode(&mut dec)?);
            let dc = prev_dc + delta;
            prev_dc = dc;
            coeffs[0] = dc as f64 * dc_q;
            for pos in 1..BLOCK * BLOCK {
                let band = zero_band(pos);
                if dec.decode_bit(&mut models.zero[band])? {
                    let negative = dec.decode_raw_bit()?;
                    let mag = models.magnitude[mag_band(pos)].decode(&mut dec)? + 1;
                    let q = if negative { -(mag as i64) } else { mag as i64 };
                    coeffs[order[pos]] = q as f64 * ac_q;
                }
            }
            let pixels = dct::inverse(&coeffs);
            let (by, bx) = (b / bw, b % bw);
            for y in 0..BLOCK {
                let oy = by * BLOCK + y;
                if oy >= height {
                    continue;
                }
                for x in 0..BLOCK {
                    let ox = bx * BLOCK + x;
                    if ox >= width {
                        continue;
                    }
                    out[[c, oy, ox]] = pixels[y * BLOCK + x].clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(out)
}
