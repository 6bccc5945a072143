//! Feature extraction and Gaussian statistics for distribution distances.
//!
//! The extractor is pluggable; the default is a small convolutional net with
//! frozen seeded random weights, so distances are deterministic without any
//! downloaded model. Random projections preserve enough geometry to rank
//! similar-vs-dissimilar image batches, which is all the desk-scale harness
//! needs from it.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, SpicError};
use crate::types::Image;

/// Gaussian fit of a feature distribution.
#[derive(Debug, Clone)]
pub struct FeatureStatistics {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub n: usize,
}

impl FeatureStatistics {
    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased sample covariance of row-vector features,
/// symmetrized exactly.
pub fn feature_stats(features: &Array2<f64>) -> Result<FeatureStatistics> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(SpicError::InvalidMetricInput(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(SpicError::InvalidMetricInput(
            "non-finite feature value".into(),
        ));
    }
    let mu = features.mean_axis(Axis(0)).unwrap();
    let centered = features - &mu.view().insert_axis(Axis(0));
    let mut sigma = centered.t().dot(&centered) / (n - 1) as f64;
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (sigma[[i, j]] + sigma[[j, i]]);
            sigma[[i, j]] = s;
            sigma[[j, i]] = s;
        }
    }
    Ok(FeatureStatistics { mu, sigma, n })
}

pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn d(&self) -> usize;
    fn extract(&self, x: &Image) -> Result<Array1<f64>>;
}

/// Stacks features of a batch into the row matrix `feature_stats` expects.
pub fn extract_batch(images: &[Image], ex: &dyn FeatureExtractor) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((images.len(), ex.d()));
    for (i, img) in images.iter().enumerate() {
        let f = ex.extract(img)?;
        if f.len() != ex.d() {
            return Err(SpicError::InvalidMetricInput(format!(
                "extractor {} returned {} dims, declared {}",
                ex.name(),
                f.len(),
                ex.d()
            )));
        }
        out.row_mut(i).assign(&f);
    }
    Ok(out)
}

const CONV1_OUT: usize = 8;
const CONV2_OUT: usize = 16;
const KERNEL: usize = 3;

/// Two strided 3x3 conv layers with ReLU and fixed ChaCha-seeded weights;
/// features are per-channel global mean and max of the last layer.
pub struct SeededConvFeatures {
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl SeededConvFeatures {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: f64| -> Vec<f64> {
            let scale = (2.0 / fan_in).sqrt();
            (0..n)
                .map(|_| {
                    // Box-Muller from two uniform draws keeps this independent
                    // of any library's normal-sampling internals.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect()
        };
        let fan1 = (3 * KERNEL * KERNEL) as f64;
        let fan2 = (CONV1_OUT * KERNEL * KERNEL) as f64;
        Self {
            w1: draw(CONV1_OUT * 3 * KERNEL * KERNEL, fan1),
            w2: draw(CONV2_OUT * CONV1_OUT * KERNEL * KERNEL, fan2),
        }
    }

    fn conv_stride2_relu(
        input: &Array3<f64>,
        weights: &[f64],
        out_ch: usize,
    ) -> Array3<f64> {
        let (in_ch, h, w) = input.dim();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Array3::zeros((out_ch, oh, ow));
        let pad = (KERNEL / 2) as isize;
        for oc in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..in_ch {
                        for ky in 0..KERNEL {
                            let sy = (2 * oy) as isize + ky as isize - pad;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..KERNEL {
                                let sx = (2 * ox) as isize + kx as isize - pad;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let wi = ((oc * in_ch + ic) * KERNEL + ky) * KERNEL + kx;
                                acc += weights[wi] * input[[ic, sy as usize, sx as usize]];
                            }
                        }
                    }
                    out[[oc, oy, ox]] = acc.max(0.0);
                }
            }
        }
        out
    }
}

impl FeatureExtractor for SeededConvFeatures {
    fn name(&self) -> &str {
        "seeded-conv"
    }

    fn d(&self) -> usize {
        2 * CONV2_OUT
    }

    fn extract(&self, x: &Image) -> Result<Array1<f64>> {
        let a = Self::conv_stride2_relu(x.data(), &self.w1, CONV1_OUT);
        let b = Self::conv_stride2_relu(&a, &self.w2, CONV2_OUT);
        let mut f = Array1::zeros(2 * CONV2_OUT);
        for c in 0..CONV2_OUT {
            let plane = b.index_axis(Axis(0), c);
            f[c] = plane.mean().unwrap();
            f[CONV2_OUT + c] = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(f)
    }
}
