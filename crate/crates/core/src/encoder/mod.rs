//! Transmitter side: segment the image, compress the label map losslessly,
//! downscale and compress the coarse image lossily, and pack both payloads
//! into one bitstream with exact rate accounting.

pub mod coarse_codec;
pub mod container;
pub mod dct;
pub mod external;
pub mod range_coder;
pub mod rate;
pub mod scale;
pub mod segmenter;
pub mod ssm_codec;

pub use coarse_codec::{decode_coarse_lossy, encode_coarse_lossy, CoarseCodecId};
pub use container::{pack, unpack, BitstreamMeta, HEADER_LEN, MAGIC, VERSION};
pub use rate::{compute_rate, RateReport};
pub use scale::{downscale_average, upscale_coarse};
pub use segmenter::{segment, ColorRuleSegmenter, GroundTruthSegmenter, Segmenter};
pub use ssm_codec::{decode_ssm_lossless, encode_ssm_lossless, SsmCodecId};

use crate::error::{Result, SpicError};
use crate::types::{CoarseImage, Image, SegmentationMap, DOWNSCALE_FACTOR};

#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub coarse_quality: u8,
    pub ssm_codec: SsmCodecId,
    pub coarse_codec: CoarseCodecId,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            coarse_quality: 30,
            ssm_codec: SsmCodecId::Reference,
            coarse_codec: CoarseCodecId::Reference,
        }
    }
}

/// Everything the receiver recovers from a bitstream before any learned
/// reconstruction happens.
#[derive(Debug, Clone)]
pub struct DecodedBitstream {
    pub meta: BitstreamMeta,
    pub ssm: SegmentationMap,
    pub coarse: CoarseImage,
}

/// Full transmitter path for one image.
pub fn encode_image(
    x: &Image,
    seg: &dyn Segmenter,
    opts: &EncodeOptions,
) -> Result<(Vec<u8>, RateReport)> {
    if x.width() > u16::MAX as usize || x.height() > u16::MAX as usize {
        return Err(SpicError::InvalidImage(format!(
            "dims {}x{} exceed the 16-bit header fields",
            x.height(),
            x.width()
        )));
    }
    let s = segment(x, seg)?;
    let ssm_bytes = encode_ssm_lossless(&s, opts.ssm_codec)?;
    let coarse = downscale_average(x, DOWNSCALE_FACTOR)?;
    let coarse_bytes = encode_coarse_lossy(&coarse, opts.coarse_quality, opts.coarse_codec)?;
    let meta = BitstreamMeta {
        width: x.width() as u16,
        height: x.height() as u16,
        n_classes: s.n_classes(),
        ssm_codec: opts.ssm_codec,
        coarse_codec: opts.coarse_codec,
        coarse_quality: opts.coarse_quality,
    };
    let bytes = pack(&meta, &ssm_bytes, &coarse_bytes)?;
    let rate = compute_rate(ssm_bytes.len(), coarse_bytes.len(), x.width(), x.height());
    Ok((bytes, rate))
}

/// Receiver path up to (but not including) diffusion reconstruction.
pub fn decode_bitstream(bytes: &[u8]) -> Result<DecodedBitstream> {
    let (meta, ssm_bytes, coarse_bytes) = unpack(bytes)?;
    let (w, h) = (meta.width as usize, meta.height as usize);
    if h == 0 || w == 0 || h % DOWNSCALE_FACTOR != 0 || w % DOWNSCALE_FACTOR != 0 {
        return Err(SpicError::NotDivisible {
            height: h,
            width: w,
            factor: DOWNSCALE_FACTOR,
        });
    }
    let ssm = decode_ssm_lossless(ssm_bytes, h, w, meta.n_classes, meta.ssm_codec)?;
    let coarse = decode_coarse_lossy(
        coarse_bytes,
        h / DOWNSCALE_FACTOR,
        w / DOWNSCALE_FACTOR,
        meta.coarse_quality,
        meta.coarse_codec,
    )?;
    Ok(DecodedBitstream { meta, ssm, coarse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn two_tone_image() -> Image {
        Image::new(Array3::from_shape_fn((3, 16, 24), |(c, y, _)| {
            if y < 8 {
                [0.9, 0.1, 0.1][c]
            } else {
                [0.1, 0.2, 0.9][c]
            }
        }))
        .unwrap()
    }

    #[test]
    fn encode_decode_pipeline_round_trip() {
        let x = two_tone_image();
        let seg =
            ColorRuleSegmenter::new(vec![[0.9, 0.1, 0.1], [0.1, 0.2, 0.9]]).unwrap();
        let (bytes, rate) = encode_image(&x, &seg, &EncodeOptions::default()).unwrap();
        assert_eq!(rate.bpp_total, rate.bpp_ssm + rate.bpp_coarse + rate.bpp_header);
        assert_eq!(
            bytes.len(),
            HEADER_LEN + rate.ssm_bytes + rate.coarse_bytes
        );

        let dec = decode_bitstream(&bytes).unwrap();
        assert_eq!(dec.meta.n_classes, 2);
        assert_eq!((dec.ssm.height(), dec.ssm.width()), (16, 24));
        assert_eq!((dec.coarse.height(), dec.coarse.width()), (4, 6));
        // The label map is lossless end to end.
        let expected = segment(&x, &seg).unwrap();
        assert_eq!(dec.ssm.labels(), expected.labels());
    }

    #[test]
    fn bitstream_with_non_divisible_dims_is_rejected() {
        let x = two_tone_image();
        let seg = ColorRuleSegmenter::new(vec![[0.5, 0.5, 0.5]]).unwrap();
        let (bytes, _) = encode_image(&x, &seg, &EncodeOptions::default()).unwrap();
        let mut bad = bytes.clone();
        bad[6] = 23; // width 24 -> 23, no longer divisible by 4
        assert!(matches!(
            decode_bitstream(&bad),
            Err(SpicError::NotDivisible { .. })
        ));
    }
}
