//! Transmitted bitstream container.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SPIC"
//!      4     1  version (currently 1)
//!      5     2  width
//!      7     2  height
//!      9     1  n_classes
//!     10     1  ssm codec id
//!     11     1  coarse codec id
//!     12     1  coarse quality
//!     13     4  ssm payload length
//!     17     4  coarse payload length
//!     21     -  ssm payload, then coarse payload
//! ```
//!
//! `unpack` is the exact inverse of `pack`: any parse that succeeds
//! re-serializes to the same bytes.

use crate::encoder::coarse_codec::CoarseCodecId;
use crate::encoder::ssm_codec::SsmCodecId;
use crate::error::{Result, SpicError};

pub const MAGIC: [u8; 4] = *b"SPIC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 21;

/// Header fields other than the payload lengths, which are implied by the
/// payload slices themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamMeta {
    pub width: u16,
    pub height: u16,
    pub n_classes: u8,
    pub ssm_codec: SsmCodecId,
    pub coarse_codec: CoarseCodecId,
    pub coarse_quality: u8,
}

pub fn pack(meta: &BitstreamMeta, ssm: &[u8], coarse: &[u8]) -> Result<Vec<u8>> {
    for payload in [ssm, coarse] {
        if payload.len() > u32::MAX as usize {
            return Err(SpicError::PayloadTooLarge(payload.len()));
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + ssm.len() + coarse.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&meta.width.to_be_bytes());
    out.extend_from_slice(&meta.height.to_be_bytes());
    out.push(meta.n_classes);
    out.push(meta.ssm_codec as u8);
    out.push(meta.coarse_codec as u8);
    out.push(meta.coarse_quality);
    out.extend_from_slice(&(ssm.len() as u32).to_be_bytes());
    out.extend_from_slice(&(coarse.len() as u32).to_be_bytes());
    out.extend_from_slice(ssm);
    out.extend_from_slice(coarse);
    Ok(out)
}

pub fn unpack(bytes: &[u8]) -> Result<(BitstreamMeta, &[u8], &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(SpicError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(SpicError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(SpicError::BadVersion(bytes[4]));
    }
    let meta = BitstreamMeta {
        width: u16::from_be_bytes(bytes[5..7].try_into().unwrap()),
        height: u16::from_be_bytes(bytes[7..9].try_into().unwrap()),
        n_classes: bytes[9],
        ssm_codec: SsmCodecId::try_from(bytes[10])?,
        coarse_codec: CoarseCodecId::try_from(bytes[11])?,
        coarse_quality: bytes[12],
    };
    let ssm_len = u32::from_be_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let coarse_len = u32::from_be_bytes(bytes[17..21].try_into().unwrap()) as usize;
    let declared = HEADER_LEN + ssm_len + coarse_len;
    if bytes.len() != declared {
        return Err(SpicError::LengthMismatch {
            declared,
            actual: bytes.len(),
        });
    }
    let ssm = &bytes[HEADER_LEN..HEADER_LEN + ssm_len];
    let coarse = &bytes[HEADER_LEN + ssm_len..];
    Ok((meta, ssm, coarse))
}
