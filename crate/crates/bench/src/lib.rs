//! Canned inputs shared by the criterion benches: a deterministic synthetic
//! image pair and a small untrained denoiser.

use spic_core::diffusion::{Denoiser, DenoiserConfig};
use spic_core::encoder::downscale_average;
use spic_core::harness::{synthetic_pair, SyntheticConfig};
use spic_core::types::{CoarseImage, Image, SegmentationMap, DOWNSCALE_FACTOR};

pub fn pair(height: usize, width: usize) -> (Image, SegmentationMap) {
    let cfg = SyntheticConfig {
        count: 1,
        height,
        width,
        seed: 7,
    };
    synthetic_pair(&cfg, 0).expect("valid synthetic dims")
}

pub fn coarse_of(img: &Image) -> CoarseImage {
    downscale_average(img, DOWNSCALE_FACTOR).expect("divisible dims")
}

/// Small model, sized so a single forward pass is milliseconds, not minutes.
pub fn small_denoiser() -> Denoiser {
    let cfg = DenoiserConfig {
        base_channels: 8,
        channel_mult: vec![1, 2],
        res_blocks: 1,
        attend_lowest: true,
        n_classes: 4,
        spade_hidden: 8,
    };
    Denoiser::new(cfg, 0).expect("valid config")
}
