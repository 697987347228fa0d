//! Denoiser training: epsilon-prediction objective over contour- and
//! adjacency-conditioned output-domain slices.

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{Domain, RunConfig, SliceImage, Volume};
use crate::diffusion::checkpoint::{CheckpointMeta, ScheduleSpec};
use crate::diffusion::conditioning::{sample_adjacent, ConditioningBundle};
use crate::diffusion::schedule::{build_schedule, forward_noise, NoiseSchedule};
use crate::diffusion::unet::{build_unet, ArchDescriptor, UNet};
use crate::error::{Error, Result};
use crate::imageproc::{apply_filter_mask, artifact_filter_mask, canny, ContourMap};

/// Contour for one slice under the configured extraction settings:
/// optional artifact filtering, then Canny with the domain's thresholds.
pub fn slice_contour(slice: &SliceImage, domain: Domain, config: &RunConfig) -> ContourMap {
    let (low, high) = config.canny_thresholds(domain);
    if config.artifact_filter {
        let mask = artifact_filter_mask(slice);
        let filtered = apply_filter_mask(slice, &mask);
        canny(&filtered, low, high, config.canny_sigma)
    } else {
        canny(slice, low, high, config.canny_sigma)
    }
}

/// Rescale `[0, 1]` pixels to the model's `[-1, 1]` working range.
pub fn to_model_range(slice: &SliceImage) -> Vec<f32> {
    slice.pixels().iter().map(|&p| 2.0 * p - 1.0).collect()
}

/// One training example: a slice in model range, its contour, and the
/// indices of its in-volume neighbors.
pub struct TrainingItem {
    pub x0: Vec<f32>,
    pub contour: ContourMap,
    pub slice: SliceImage,
    pub prev: Option<usize>,
    pub next: Option<usize>,
}

pub struct TrainingSet {
    pub items: Vec<TrainingItem>,
    pub resolution: usize,
}

/// Flatten output-domain volumes into training items with precomputed
/// contours. Single-slice volumes train with a permanently empty
/// adjacent channel; a warning is emitted for them.
pub fn build_training_set(volumes: &[Volume], config: &RunConfig) -> Result<TrainingSet> {
    let mut items = Vec::new();
    let resolution = config.resolution;
    for volume in volumes {
        if volume.slices.len() == 1 {
            eprintln!(
                "warning: volume {} has a single slice; adjacent-slice conditioning disabled for it",
                volume.volume_id
            );
        }
        let base = items.len();
        let count = volume.slices.len();
        for (i, slice) in volume.slices.iter().enumerate() {
            if slice.height() != resolution || slice.width() != resolution {
                return Err(Error::ShapeMismatch {
                    expected: format!("{resolution}x{resolution}"),
                    actual: format!("{}x{}", slice.height(), slice.width()),
                    context: format!("volume {} slice {i}", volume.volume_id),
                });
            }
            items.push(TrainingItem {
                x0: to_model_range(slice),
                contour: slice_contour(slice, volume.domain, config),
                slice: slice.clone(),
                prev: if i > 0 { Some(base + i - 1) } else { None },
                next: if i + 1 < count { Some(base + i + 1) } else { None },
            });
        }
    }
    if items.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(TrainingSet { items, resolution })
}

/// Mean-squared error between the noise estimate and the true noise.
pub fn epsilon_loss(pred: &Tensor, eps: &Tensor) -> candle_core::Result<Tensor> {
    (pred - eps)?.sqr()?.mean_all()
}

/// Cap for the timestep loss weight.
pub const WEIGHT_CAP: f64 = 10.0;

/// Per-timestep loss weight `min((1 - alpha_bar) / alpha_bar, cap)`.
///
/// An unweighted noise-prediction loss puts almost no pressure on large
/// timesteps: there the signal contributes ~`alpha_bar` of the variance,
/// so a model can score well while never learning to draw structure out
/// of the conditioning. This weight rescales each sample's error to
/// clean-image space (capped, so near-pure-noise steps cannot dominate),
/// which is what the reverse process actually needs.
pub fn timestep_weight(t: usize, schedule: &NoiseSchedule, cap: f64) -> f64 {
    let ab = schedule.alpha_bar(t);
    ((1.0 - ab) / ab).min(cap)
}

/// Draw a batch, take one optimizer step, and return the loss.
/// Aborts with diagnostics if the loss is non-finite.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    model: &UNet,
    opt: &mut AdamW,
    set: &TrainingSet,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
    device: &Device,
) -> Result<f64> {
    let n = set.resolution * set.resolution;
    let batch = config.batch_size;
    let mut x_t = Vec::with_capacity(batch * n);
    let mut cond = Vec::with_capacity(batch * 2 * n);
    let mut eps_all = Vec::with_capacity(batch * n);
    let mut t_values = Vec::with_capacity(batch);

    for _ in 0..batch {
        let item = &set.items[rng.gen_range(0..set.items.len())];
        let t = rng.gen_range(1..=schedule.t_steps);
        t_values.push(t);
        let eps: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        x_t.extend(forward_noise(&item.x0, t, &eps, schedule)?);
        let adjacent = sample_adjacent(
            item.prev.map(|i| &set.items[i].slice),
            item.next.map(|i| &set.items[i].slice),
            config.p_adj,
            rng,
        );
        let bundle = ConditioningBundle {
            contour: item.contour.clone(),
            adjacent: adjacent.cloned(),
        };
        cond.extend(bundle.encode());
        eps_all.extend(eps);
    }

    let r = set.resolution;
    let x_t = Tensor::from_vec(x_t, (batch, 1, r, r), device)?;
    let cond = Tensor::from_vec(cond, (batch, 2, r, r), device)?;
    let eps = Tensor::from_vec(eps_all, (batch, 1, r, r), device)?;
    let pred = model.forward(&x_t, &t_values, &cond)?;
    let weights: Vec<f32> = t_values
        .iter()
        .map(|&t| timestep_weight(t, schedule, WEIGHT_CAP) as f32)
        .collect();
    let weights = Tensor::from_vec(weights, batch, device)?;
    let per_sample = (&pred - &eps)?.sqr()?.mean(D::Minus1)?.mean(D::Minus1)?.mean(D::Minus1)?;
    let loss = (per_sample * weights)?.mean_all()?;
    let loss_value = loss.to_scalar::<f32>()? as f64;
    if !loss_value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            t_values,
            loss: loss_value,
        });
    }
    opt.backward_step(&loss)?;
    Ok(loss_value)
}

pub struct TrainedTranslator {
    pub model: UNet,
    pub varmap: VarMap,
    pub meta: CheckpointMeta,
    pub schedule: NoiseSchedule,
    pub losses: Vec<f64>,
}

/// Full training loop over output-domain volumes.
pub fn train_translator(
    volumes: &[Volume],
    config: &RunConfig,
    device: &Device,
) -> Result<TrainedTranslator> {
    config.validate()?;
    let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max)?;
    let set = build_training_set(volumes, config)?;
    let arch = ArchDescriptor::denoiser(config.resolution, config.width_factor);
    let (model, varmap) = build_unet(&arch, device)?;
    crate::rng::reseed_varmap(&varmap, config.seed, "train-init")?;
    let mut opt = AdamW::new(
        varmap.all_vars(),
        ParamsAdamW {
            lr: config.lr,
            ..Default::default()
        },
    )?;
    let mut rng = crate::rng::stream(config.seed, "train");
    let log_every = (config.train_steps / 20).max(1);
    let mut losses = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        // Cosine learning-rate decay: without it the loss collapses back
        // to the zero-predictor once gradients become noise-dominated.
        let progress = step as f64 / config.train_steps as f64;
        opt.set_learning_rate(config.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let loss = training_step(
            &model, &mut opt, &set, &schedule, config, step, &mut rng, device,
        )?;
        losses.push(loss);
        if step % log_every == 0 || step + 1 == config.train_steps {
            let window = &losses[losses.len().saturating_sub(log_every)..];
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            println!("stage=train step={step} loss={loss:.5} avg={avg:.5}");
        }
    }
    let meta = CheckpointMeta {
        schedule: ScheduleSpec {
            t_steps: config.t_steps,
            beta_min: config.beta_min,
            beta_max: config.beta_max,
        },
        arch,
        train_steps: config.train_steps,
        p_adj: config.p_adj,
        seed: config.seed,
    };
    Ok(TrainedTranslator {
        model,
        varmap,
        meta,
        schedule,
        losses,
    })
}
