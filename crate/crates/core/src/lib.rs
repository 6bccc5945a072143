//! Semantic image coding: compress an image as a lossless segmentation map
//! plus a lossy coarse thumbnail, then reconstruct it with a diffusion model
//! conditioned on both.
//!
//! Modules follow the pipeline: [`types`] and [`io`] hold shared rasters and
//! file formats, [`encoder`] is the transmitter, [`diffusion`] the learned
//! receiver, [`metrics`] the evaluation math, and [`harness`] the dataset,
//! sweep, and plotting machinery around them.

pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod types;

pub use error::{Result, SpicError};
pub use types::{
    CoarseImage, Image, ModelRangeImage, OneHotMap, SegmentationMap, CHANNELS, DOWNSCALE_FACTOR,
};
