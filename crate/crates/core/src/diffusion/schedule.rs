//! Forward-process noise schedule.
//!
//! Linear beta ramp; alpha_bar accumulates the products. Timesteps are
//! 1-based: t ranges over 1..=T, and alpha_bar(0) is defined as 1 so the
//! final reverse step has a clean endpoint.

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpicError};
use crate::types::ModelRangeImage;

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// The three numbers a schedule is rebuilt from; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

pub fn make_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(SpicError::InvalidSchedule("need at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(SpicError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..t_max)
        .map(|i| {
            if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn from_params(p: &ScheduleParams) -> Result<Self> {
        make_schedule(p.t_max, p.beta_start, p.beta_end)
    }

    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(SpicError::TimestepOutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// alpha_bar extended to t = 0 (no noising yet).
    pub fn alpha_bar_or_one(&self, t: usize) -> Result<f64> {
        if t == 0 {
            Ok(1.0)
        } else {
            self.alpha_bar(t)
        }
    }
}

/// Forward process: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
pub fn q_sample(
    x0: &ModelRangeImage,
    t: usize,
    eps: &Array3<f64>,
    sched: &NoiseSchedule,
) -> Result<Array3<f64>> {
    if x0.data().dim() != eps.dim() {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{:?}", x0.data().dim()),
            got: format!("{:?}", eps.dim()),
        });
    }
    let ab = sched.alpha_bar(t)?;
    Ok(x0.data() * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Unit Gaussian noise tensor of any shape, drawn in logical element order.
pub fn sample_noise<R: Rng, Sh>(rng: &mut R, shape: Sh) -> ndarray::Array<f64, Sh::Dim>
where
    Sh: ndarray::ShapeBuilder,
{
    ndarray::Array::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}
