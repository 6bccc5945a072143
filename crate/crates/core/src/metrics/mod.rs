//! Evaluation metrics: mIoU over label maps, Fréchet distance over feature
//! statistics, and PSNR.

pub mod features;
pub mod fid;
pub mod iou;

pub use features::{
    extract_batch, feature_stats, FeatureExtractor, FeatureStatistics, SeededConvFeatures,
};
pub use fid::fid;
pub use iou::{iou_class, miou, ConfusionAccumulator};

use serde::Serialize;

use crate::error::{Result, SpicError};
use crate::types::Image;

/// PSNR against the [0,1] peak. Identical inputs get their own marker
/// rather than pretending infinity is a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    /// Numeric view for tables and plots; identical maps to +inf.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

pub fn psnr(x: &Image, y: &Image) -> Result<Psnr> {
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{}x{}", x.height(), x.width()),
            got: format!("{}x{}", y.height(), y.width()),
        });
    }
    let mse = x
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.data().len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (1.0 / mse).log10()))
}

/// One evaluated image: rate breakdown plus quality metrics. `fid_batch` is
/// the batch-level Fréchet distance of the group this image was evaluated
/// in, repeated on each of the group's rows.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub image_id: String,
    pub bpp_total: f64,
    pub bpp_ssm: f64,
    pub bpp_coarse: f64,
    pub miou: f64,
    pub fid_batch: f64,
    pub psnr: f64,
}
