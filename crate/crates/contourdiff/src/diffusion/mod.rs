//! Contour-conditioned denoising diffusion: schedule, conditioning,
//! model, training, sampling, and checkpointing.

pub mod checkpoint;
pub mod conditioning;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint, ScheduleSpec};
pub use conditioning::{sample_adjacent, ConditioningBundle};
pub use sample::{ddim_sample_batch, ddpm_sample_batch, gaussian_latent, to_slice_image};
pub use schedule::{build_schedule, ddim_step, ddpm_reverse_step, forward_noise, NoiseSchedule};
pub use train::{build_training_set, slice_contour, to_model_range, train_translator, training_step, TrainedTranslator};
pub use unet::{build_unet, ArchDescriptor, Denoiser, UNet};
