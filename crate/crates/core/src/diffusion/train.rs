//! Noise-prediction training: Adam over the full parameter set, uniform
//! timestep sampling, MSE against the injected noise.
//!
//! The model is conditioned on the *decoded* coarse image (the one the
//! receiver will actually have), not the pristine downscale, so train and
//! test conditions match.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::sampler::denoise_step_input;
use super::schedule::{q_sample, sample_noise, NoiseSchedule, ScheduleParams};
use super::unet::{Denoiser, OUT_CHANNELS};
use crate::error::{Result, SpicError};
use crate::types::{to_model_range, CoarseImage, Image, ModelRangeImage, SegmentationMap};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub schedule: ScheduleParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            schedule: ScheduleParams::default(),
        }
    }
}

/// One training example: the ground-truth image, the coarse image as the
/// receiver decodes it, and the segmentation map.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: Image,
    pub coarse: CoarseImage,
    pub ssm: SegmentationMap,
}

/// Adam with bias correction; state is kept per parameter tensor.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<ArrayD<f64>> = (0..params.len())
            .map(|i| ArrayD::zeros(IxDyn(params.value(i).shape())))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[ArrayD<f64>]) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            self.m[i].zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i]
                .zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (&self.m[i], &self.v[i]);
            let (lr, eps) = (self.lr, self.eps);
            ndarray::Zip::from(params.value_mut(i))
                .and(m)
                .and(v)
                .for_each(|p, &m, &v| {
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                });
        }
    }
}

/// Noisy 6-channel inputs, per-item timesteps, and the noise targets for
/// one batch. Targets are the exact eps draws used to corrupt the images.
fn build_batch(
    items: &[&TrainItem],
    sched: &NoiseSchedule,
    rng: &mut ChaCha12Rng,
) -> Result<(ArrayD<f64>, Vec<usize>, ArrayD<f64>)> {
    let b = items.len();
    let (h, w) = (items[0].image.height(), items[0].image.width());
    let mut x6 = ArrayD::<f64>::zeros(IxDyn(&[b, 6, h, w]));
    let mut targets = ArrayD::<f64>::zeros(IxDyn(&[b, OUT_CHANNELS, h, w]));
    let mut ts = Vec::with_capacity(b);
    for (bi, item) in items.iter().enumerate() {
        if item.image.height() != h || item.image.width() != w {
            return Err(SpicError::DimensionMismatch {
                expected: format!("{h}x{w}"),
                got: format!("{}x{}", item.image.height(), item.image.width()),
            });
        }
        let t = rng.gen_range(1..=sched.t_max());
        let eps: Array3<f64> = sample_noise(rng, (3, h, w));
        let x0 = to_model_range(item.image.data())?;
        let x_t = q_sample(&x0, t, &eps, sched)?;
        let item_x6 = denoise_step_input(&ModelRangeImage::from_raw(x_t), &item.coarse)?;
        x6.slice_mut(ndarray::s![bi, .., .., ..]).assign(&item_x6);
        targets
            .slice_mut(ndarray::s![bi, .., .., ..])
            .assign(&eps);
        ts.push(t);
    }
    Ok((x6, ts, targets))
}

/// Loss of one forward pass on a single example; no parameters change.
/// Draws t uniform in `[1, T]` and a fresh unit Gaussian eps.
pub fn training_step(
    model: &Denoiser,
    sched: &NoiseSchedule,
    item: &TrainItem,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let (x6, ts, targets) = build_batch(&[item], sched, rng)?;
    let (loss, _) = model.loss_and_grads(&x6, &ts, &[&item.ssm], &targets)?;
    Ok(loss)
}

pub struct Trainer {
    pub model: Denoiser,
    sched: NoiseSchedule,
    opt: Adam,
    rng: ChaCha12Rng,
    cfg: TrainConfig,
    pub loss_history: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Denoiser, cfg: TrainConfig) -> Result<Self> {
        if cfg.steps == 0 || cfg.batch_size == 0 {
            return Err(SpicError::InvalidConfig(
                "steps and batch_size must be >= 1".into(),
            ));
        }
        let sched = NoiseSchedule::from_params(&cfg.schedule)?;
        let opt = Adam::new(model.params(), cfg.lr);
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            sched,
            opt,
            rng,
            cfg,
            loss_history: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step on an explicit batch; returns the batch loss.
    pub fn step(&mut self, batch: &[&TrainItem]) -> Result<f64> {
        let (x6, ts, targets) = build_batch(batch, &self.sched, &mut self.rng)?;
        let ssms: Vec<&SegmentationMap> = batch.iter().map(|i| &i.ssm).collect();
        let (loss, grads) = self.model.loss_and_grads(&x6, &ts, &ssms, &targets)?;
        self.opt.step(self.model.params_mut(), &grads);
        self.loss_history.push(loss);
        Ok(loss)
    }

    /// Runs `cfg.steps` optimizer steps over uniformly resampled batches.
    /// `on_progress` fires after each step with (step index, loss).
    pub fn train(
        &mut self,
        items: &[TrainItem],
        mut on_progress: impl FnMut(usize, f64),
    ) -> Result<()> {
        if items.is_empty() {
            return Err(SpicError::InvalidConfig("empty training set".into()));
        }
        for step in 0..self.cfg.steps {
            let batch: Vec<&TrainItem> = (0..self.cfg.batch_size)
                .map(|_| &items[self.rng.gen_range(0..items.len())])
                .collect();
            let loss = self.step(&batch)?;
            on_progress(step, loss);
        }
        Ok(())
    }
}

/// Trailing mean over up to `window` previous values; index i averages
/// `history[i+1-min(window, i+1) ..= i]`.
pub fn trailing_mean(history: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(history.len());
    let mut sum = 0.0;
    for i in 0..history.len() {
        sum += history[i];
        if i >= window {
            sum -= history[i - window];
        }
        out.push(sum / (i.min(window - 1) + 1) as f64);
    }
    out
}
