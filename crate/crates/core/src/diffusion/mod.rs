//! Text-conditioned latent diffusion: schedules, deterministic DDIM sampling
//! and inversion, the Gaussian KL oracle, a small cross-attention denoiser
//! with hand-written reverse-mode gradients, and its training loop.

pub mod checkpoint;
pub mod kl;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{Denoiser, DenoiserConfig, DenoiserOutput, EpsModel};
pub use sampler::{ddim_invert_step, ddim_step, denoise, invert};
pub use schedule::{NoiseSchedule, ScheduleKind};
