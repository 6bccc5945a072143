//! Conditional denoising diffusion: schedule, network, training, sampling.

pub mod checkpoint;
pub mod nn;
pub mod params;
pub mod sampler;
pub mod schedule;
pub mod spade;
pub mod train;
pub mod unet;

pub use sampler::{sample, SamplerConfig};
pub use schedule::{make_schedule, sample_noise, NoiseSchedule, ScheduleParams};
pub use train::{TrainConfig, Trainer, TrainItem};
pub use unet::{Denoiser, DenoiserConfig};
