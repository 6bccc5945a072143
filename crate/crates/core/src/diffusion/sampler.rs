//! Reverse-process sampling with a short timestep subsequence.
//!
//! Inference runs far fewer steps than training (default 20 of 1000). The
//! chain starts from the range-normalized upscaled coarse image itself, not
//! from noise: the conditioning is a good initial state, and "replace the
//! noise with the coarse image" is taken literally. Channels 3..6 of the
//! network input carry that same coarse image, untouched, at every step.
//!
//! Because the initial state is a clean signal rather than the heavily
//! noised marginal the model was trained on at large t, the subsequence
//! enters the schedule mid-way (`t_start`): late-schedule updates would
//! treat the coarse image as pure noise and wash it out, while a mid-range
//! entry keeps it informative and still leaves the model enough noise
//! budget to repaint what downscaling destroyed.

use ndarray::{s, Array3, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{sample_noise, NoiseSchedule};
use super::unet::Denoiser;
use crate::encoder::scale::upscale_coarse;
use crate::error::{Result, SpicError};
use crate::types::{
    from_model_range, to_model_range, CoarseImage, Image, ModelRangeImage, SegmentationMap,
    DOWNSCALE_FACTOR,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Reverse steps to execute; must not exceed the schedule length.
    pub steps: usize,
    /// First timestep of the chain; `None` means [`default_t_start`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            t_start: None,
            seed: 0,
        }
    }
}

/// Chain entry point when the config leaves it unset: a quarter of the
/// schedule. At the default linear betas that is where roughly half the
/// signal variance survives, deep enough to redraw the structure that
/// downscaling destroyed but shallow enough that the updates do not treat
/// the clean coarse init as noise. Never below `steps`: a strictly
/// decreasing subsequence needs that many distinct timesteps.
pub fn default_t_start(t_max: usize, steps: usize) -> usize {
    (t_max / 4).max(steps).min(t_max)
}

/// Strictly decreasing timesteps from `first` down to 1, evenly spaced.
/// The last entry is always 1 so the final update lands on t = 0.
pub fn timestep_subsequence(first: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > first {
        return Err(SpicError::InvalidConfig(format!(
            "steps {steps} outside 1..={first}"
        )));
    }
    if steps == 1 {
        return Ok(vec![1]);
    }
    let span = (first - 1) as f64 / (steps - 1) as f64;
    let seq: Vec<usize> = (0..steps)
        .map(|i| (first as f64 - i as f64 * span).round() as usize)
        .collect();
    debug_assert!(seq.windows(2).all(|w| w[0] > w[1]), "not strictly decreasing");
    debug_assert_eq!(*seq.last().unwrap(), 1);
    Ok(seq)
}

/// One ancestral update `x_t -> x_{t_prev}` given the predicted noise and
/// the cumulative schedule values at both ends. `noise` must be `None`
/// exactly when `t_prev` is 0 (`ab_prev` = 1): the final step is
/// deterministic. The implied clean image is clipped to the model range
/// before being re-noised.
pub fn ancestral_update(
    x_t: &Array3<f64>,
    eps: &Array3<f64>,
    ab_t: f64,
    ab_prev: f64,
    noise: Option<&Array3<f64>>,
) -> Array3<f64> {
    assert_eq!(x_t.dim(), eps.dim());
    assert!(ab_prev > ab_t, "alpha_bar must increase toward t = 0");
    let x0_hat = (x_t - &(eps * (1.0 - ab_t).sqrt())) / ab_t.sqrt();
    let x0_hat = x0_hat.mapv(|v| v.clamp(-1.0, 1.0));
    let sigma_sq = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev);
    let dir_scale = (1.0 - ab_prev - sigma_sq).max(0.0).sqrt();
    let mut x_prev = x0_hat * ab_prev.sqrt() + eps * dir_scale;
    match noise {
        Some(z) => {
            assert_eq!(z.dim(), x_t.dim());
            x_prev += &(z * sigma_sq.sqrt());
        }
        None => assert_eq!(
            sigma_sq, 0.0,
            "noise may be omitted only on the deterministic final step"
        ),
    }
    x_prev
}

/// Stacks the current model-range state with the model-range upscaled
/// coarse image into the 6-channel network input.
pub fn denoise_step_input(x_t: &ModelRangeImage, c: &CoarseImage) -> Result<Array3<f64>> {
    let up = upscale_coarse(c, DOWNSCALE_FACTOR)?;
    let cond = to_model_range(up.data())?;
    let (xc, xh, xw) = x_t.data().dim();
    let (_, ch, cw) = cond.data().dim();
    if (xh, xw) != (ch, cw) || xc != 3 {
        return Err(SpicError::DimensionMismatch {
            expected: format!("[3, {ch}, {cw}]"),
            got: format!("[{xc}, {xh}, {xw}]"),
        });
    }
    let mut x6 = Array3::<f64>::zeros((6, xh, xw));
    x6.slice_mut(s![0..3, .., ..]).assign(x_t.data());
    x6.slice_mut(s![3..6, .., ..]).assign(cond.data());
    Ok(x6)
}

/// Full reverse chain; `on_step` sees the 6-channel input of every step
/// (tests assert the conditioning channels never change).
pub fn sample_observed(
    model: &Denoiser,
    sched: &NoiseSchedule,
    coarse: &CoarseImage,
    ssm: &SegmentationMap,
    cfg: &SamplerConfig,
    on_step: &mut dyn FnMut(usize, &Array3<f64>),
) -> Result<Image> {
    let up = upscale_coarse(coarse, DOWNSCALE_FACTOR)?;
    let (h, w) = (up.height(), up.width());
    if ssm.height() != h || ssm.width() != w {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{h}x{w} segmentation map"),
            got: format!("{}x{}", ssm.height(), ssm.width()),
        });
    }
    let first = match cfg.t_start {
        Some(t) => {
            if !(1..=sched.t_max()).contains(&t) {
                return Err(SpicError::InvalidConfig(format!(
                    "t_start {t} outside 1..={}",
                    sched.t_max()
                )));
            }
            t
        }
        None => default_t_start(sched.t_max(), cfg.steps),
    };
    let seq = timestep_subsequence(first, cfg.steps)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Coarse initialization: the chain starts at the conditioning itself.
    let mut x = to_model_range(up.data())?.into_data();
    for (i, &t) in seq.iter().enumerate() {
        let t_prev = seq.get(i + 1).copied().unwrap_or(0);
        let x6 = denoise_step_input(&ModelRangeImage::from_raw(x.clone()), coarse)?;
        on_step(t, &x6);
        let x6d = x6
            .insert_axis(ndarray::Axis(0))
            .into_dimensionality::<IxDyn>()
            .unwrap();
        let eps_b = model.predict_eps(&x6d, &[t], &[ssm])?;
        let eps = eps_b
            .index_axis(ndarray::Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let ab_t = sched.alpha_bar(t)?;
        let ab_prev = sched.alpha_bar_or_one(t_prev)?;
        let noise = if t_prev > 0 {
            Some(sample_noise(&mut rng, x.dim()))
        } else {
            None
        };
        x = ancestral_update(&x, &eps, ab_t, ab_prev, noise.as_ref());
    }
    from_model_range(&ModelRangeImage::from_raw(x))
}

/// Reconstructs a full-resolution image from the coarse image and the
/// segmentation map. Deterministic for a fixed `cfg.seed`.
pub fn sample(
    model: &Denoiser,
    sched: &NoiseSchedule,
    coarse: &CoarseImage,
    ssm: &SegmentationMap,
    cfg: &SamplerConfig,
) -> Result<Image> {
    sample_observed(model, sched, coarse, ssm, cfg, &mut |_, _| {})
}
