//! Lossless segmentation-map codec.
//!
//! Codec id 0 is the self-contained reference coder: a CRC-32 of the rest of
//! the payload, a palette of the labels actually present, run-length coding
//! over the row-major scan (runs may cross row boundaries), and the adaptive
//! range coder with order-1 symbol contexts. The checksum makes corruption
//! detection complete: a range-coded body has no slack of its own, so a bit
//! flip could otherwise decode to a different valid map. Codec id 1 shells
//! out to FLIF when the tool is installed.

use ndarray::Array2;

use crate::encoder::external;
use crate::encoder::range_coder::{RangeDecoder, RangeEncoder, TreeModel, UintModel};
use crate::error::{Result, SpicError};
use crate::types::SegmentationMap;

/// Which lossless coder produced an SSM payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsmCodecId {
    Reference = 0,
    ExternalFlif = 1,
}

impl TryFrom<u8> for SsmCodecId {
    type Error = SpicError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Reference),
            1 => Ok(Self::ExternalFlif),
            other => Err(SpicError::UnknownCodec(other)),
        }
    }
}

/// Compresses a segmentation map; `decode_ssm_lossless` inverts exactly.
pub fn encode_ssm_lossless(s: &SegmentationMap, codec: SsmCodecId) -> Result<Vec<u8>> {
    match codec {
        SsmCodecId::Reference => Ok(encode_reference(s)),
        SsmCodecId::ExternalFlif => external::flif_encode(s),
    }
}

/// Decompresses an SSM payload. Geometry and class count come from the
/// container header.
pub fn decode_ssm_lossless(
    payload: &[u8],
    height: usize,
    width: usize,
    n_classes: u8,
    codec: SsmCodecId,
) -> Result<SegmentationMap> {
    match codec {
        SsmCodecId::Reference => decode_reference(payload, height, width, n_classes),
        SsmCodecId::ExternalFlif => external::flif_decode(payload, height, width, n_classes),
    }
}

/// CRC-32 (IEEE, reflected), bitwise; payloads are small enough that a table
/// is not worth carrying.
fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = (crc >> 1) ^ (0xEDB8_8320 & (0u32.wrapping_sub(crc & 1)));
        }
    }
    !crc
}

const CRC_LEN: usize = 4;

fn encode_reference(s: &SegmentationMap) -> Vec<u8> {
    let labels = s.labels();
    let mut present = [false; 256];
    for &l in labels.iter() {
        present[l as usize] = true;
    }
    let palette: Vec<u8> = (0u16..256)
        .filter(|&l| present[l as usize])
        .map(|l| l as u8)
        .collect();
    let mut index_of = [0u8; 256];
    for (i, &l) in palette.iter().enumerate() {
        index_of[l as usize] = i as u8;
    }

    let mut out = vec![0u8; CRC_LEN]; // checksum written once the rest exists
    out.push(palette.len() as u8); // 1..=255 distinct labels
    out.extend_from_slice(&palette);

    let mut enc = RangeEncoder::new();
    let mut symbol_models: Vec<TreeModel> = (0..palette.len())
        .map(|_| TreeModel::for_alphabet(palette.len()))
        .collect();
    let mut run_models: Vec<UintModel> =
        (0..palette.len().min(RUN_CONTEXTS)).map(|_| UintModel::default()).collect();

    let flat: Vec<u8> = labels.iter().map(|&l| index_of[l as usize]).collect();
    let mut prev_symbol = 0usize;
    let mut i = 0usize;
    while i < flat.len() {
        let sym = flat[i];
        let mut run = 1usize;
        while i + run < flat.len() && flat[i + run] == sym {
            run += 1;
        }
        symbol_models[prev_symbol].encode(&mut enc, sym as u32);
        run_models[(sym as usize).min(RUN_CONTEXTS - 1)].encode(&mut enc, (run - 1) as u64);
        prev_symbol = sym as usize;
        i += run;
    }
    out.extend_from_slice(&enc.finish());
    let crc = crc32(&out[CRC_LEN..]).to_be_bytes();
    out[..CRC_LEN].copy_from_slice(&crc);
    out
}

const RUN_CONTEXTS: usize = 16;

fn decode_reference(
    payload: &[u8],
    height: usize,
    width: usize,
    n_classes: u8,
) -> Result<SegmentationMap> {
    if height == 0 || width == 0 {
        return Err(SpicError::CorruptPayload("zero-sized map".into()));
    }
    if payload.len() < CRC_LEN + 1 {
        return Err(SpicError::Truncated {
            needed: CRC_LEN + 1,
            have: payload.len(),
        });
    }
    let stored = u32::from_be_bytes(payload[..CRC_LEN].try_into().unwrap());
    let payload = &payload[CRC_LEN..];
    if crc32(payload) != stored {
        return Err(SpicError::CorruptPayload("checksum mismatch".into()));
    }
    let n_pal = *payload.first().ok_or(SpicError::Truncated {
        needed: 1,
        have: 0,
    })? as usize;
    if n_pal == 0 {
        return Err(SpicError::CorruptPayload("empty palette".into()));
    }
    if payload.len() < 1 + n_pal {
        return Err(SpicError::Truncated {
            needed: 1 + n_pal,
            have: payload.len(),
        });
    }
    let palette = &payload[1..1 + n_pal];
    for w in palette.windows(2) {
        if w[0] >= w[1] {
            return Err(SpicError::CorruptPayload(
                "palette entries not strictly increasing".into(),
            ));
        }
    }
    if let Some(&bad) = palette.iter().find(|&&l| l >= n_classes) {
        return Err(SpicError::CorruptPayload(format!(
            "palette label {bad} >= n_classes {n_classes}"
        )));
    }

    let mut dec = RangeDecoder::new(&payload[1 + n_pal..])?;
    let mut symbol_models: Vec<TreeModel> =
        (0..n_pal).map(|_| TreeModel::for_alphabet(n_pal)).collect();
    let mut run_models: Vec<UintModel> =
        (0..n_pal.min(RUN_CONTEXTS)).map(|_| UintModel::default()).collect();

    let total = height * width;
    let mut flat = Vec::with_capacity(total);
    let mut prev_symbol = 0usize;
    while flat.len() < total {
        let sym = symbol_models[prev_symbol].decode(&mut dec)? as usize;
        if sym >= n_pal {
            return Err(SpicError::CorruptPayload(format!(
                "symbol {sym} outside palette of {n_pal}"
            )));
        }
        let run = run_models[sym.min(RUN_CONTEXTS - 1)].decode(&mut dec)? as usize + 1;
        if flat.len() + run > total {
            return Err(SpicError::CorruptPayload(format!(
                "run of {run} overflows {total}-pixel map"
            )));
        }
        flat.extend(std::iter::repeat_n(palette[sym], run));
        prev_symbol = sym;
    }

    let labels = Array2::from_shape_vec((height, width), flat)
        .map_err(|e| SpicError::CorruptPayload(e.to_string()))?;
    SegmentationMap::new(labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_map(rng: &mut ChaCha12Rng, h: usize, w: usize, n_c: u8) -> SegmentationMap {
        let labels = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..n_c));
        SegmentationMap::new(labels, n_c).unwrap()
    }

    /// Blocky map closer in statistics to a real scene than iid noise.
    fn blocky_map(rng: &mut ChaCha12Rng, h: usize, w: usize, n_c: u8) -> SegmentationMap {
        let mut labels = Array2::zeros((h, w));
        for _ in 0..12 {
            let label = rng.gen_range(0..n_c);
            let y0 = rng.gen_range(0..h);
            let x0 = rng.gen_range(0..w);
            let dy = rng.gen_range(1..=h - y0);
            let dx = rng.gen_range(1..=w - x0);
            for y in y0..y0 + dy {
                for x in x0..x0 + dx {
                    labels[[y, x]] = label;
                }
            }
        }
        SegmentationMap::new(labels, n_c).unwrap()
    }

    #[test]
    fn round_trip_random_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..50 {
            let h = rng.gen_range(1..40);
            let w = rng.gen_range(1..40);
            let n_c = rng.gen_range(1..=12) as u8;
            let s = random_map(&mut rng, h, w, n_c);
            let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
            let back =
                decode_ssm_lossless(&bytes, h, w, n_c, SsmCodecId::Reference).unwrap();
            assert_eq!(back.labels(), s.labels());
            assert_eq!(back.n_classes(), n_c);
        }
    }

    #[test]
    fn constant_map_compresses_below_100_bytes() {
        let s = SegmentationMap::new(Array2::from_elem((256, 512), 3u8), 8).unwrap();
        let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
        assert!(bytes.len() < 100, "constant map took {} bytes", bytes.len());
        let back = decode_ssm_lossless(&bytes, 256, 512, 8, SsmCodecId::Reference).unwrap();
        assert_eq!(back.labels(), s.labels());
    }

    #[test]
    fn blocky_map_beats_one_bpp() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let s = blocky_map(&mut rng, 64, 128, 5);
        let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
        let bpp = bytes.len() as f64 * 8.0 / (64.0 * 128.0);
        assert!(bpp < 1.0, "blocky map cost {bpp:.3} bpp");
    }

    #[test]
    fn truncated_payload_is_a_decode_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let s = blocky_map(&mut rng, 32, 32, 6);
        let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
        for cut in 0..bytes.len().min(24) {
            let r = decode_ssm_lossless(&bytes[..cut], 32, 32, 6, SsmCodecId::Reference);
            assert!(r.is_err(), "truncation to {cut} bytes decoded");
        }
        let r = decode_ssm_lossless(
            &bytes[..bytes.len() - 3],
            32,
            32,
            6,
            SsmCodecId::Reference,
        );
        assert!(r.is_err());
    }

    #[test]
    fn crc32_known_answer() {
        // Standard IEEE 802.3 check value.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn every_single_bit_flip_is_a_decode_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let s = blocky_map(&mut rng, 16, 24, 5);
        let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
        for byte in 0..bytes.len() {
            for bit in 0..8 {
                let mut b = bytes.clone();
                b[byte] ^= 1 << bit;
                let r = decode_ssm_lossless(&b, 16, 24, 5, SsmCodecId::Reference);
                assert!(r.is_err(), "flip at byte {byte} bit {bit} decoded");
            }
        }
    }

    #[test]
    fn palette_label_outside_n_classes_rejected() {
        let s = SegmentationMap::new(Array2::from_elem((4, 4), 7u8), 8).unwrap();
        let bytes = encode_ssm_lossless(&s, SsmCodecId::Reference).unwrap();
        // Claim fewer classes than the payload's palette uses.
        let r = decode_ssm_lossless(&bytes, 4, 4, 4, SsmCodecId::Reference);
        assert!(matches!(r, Err(SpicError::CorruptPayload(_))));
    }

    #[test]
    fn unknown_codec_id_rejected() {
        assert!(matches!(
            SsmCodecId::try_from(9u8),
            Err(SpicError::UnknownCodec(9))
        ));
    }
}
