//! Segmentation training and volumetric evaluation: Dice+BCE loss,
//! cosine learning-rate decay, best-validation-Dice checkpointing.

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::seq::SliceRandom;

use crate::dataio::{BinaryMask, RunConfig, SliceImage, Volume};
use crate::error::{Error, Result};
use crate::metrics::{assd_3d, dice_2d, dice_3d, MetricReport};
use crate::segharness::model::{build_seg_unet, SegArch, SegUNet};

/// One training example: an image and its binary mask.
#[derive(Debug, Clone)]
pub struct SegPair {
    pub image: SliceImage,
    pub mask: BinaryMask,
}

/// Flatten volumes with masks into per-slice training pairs.
pub fn pairs_from_volumes(volumes: &[Volume]) -> Result<Vec<SegPair>> {
    let mut pairs = Vec::new();
    for volume in volumes {
        let masks = volume.masks.as_ref().ok_or_else(|| {
            Error::MetricUndefined(format!("volume {} carries no masks", volume.volume_id))
        })?;
        for (image, mask) in volume.slices.iter().zip(masks) {
            pairs.push(SegPair {
                image: image.clone(),
                mask: mask.clone(),
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub arch: SegArch,
    /// Probability cutoff for mask binarization, applied identically in
    /// validation selection and final evaluation.
    pub threshold: f32,
    pub seed: u64,
}

impl SegTrainConfig {
    pub fn from_run(config: &RunConfig) -> SegTrainConfig {
        SegTrainConfig {
            epochs: config.seg_epochs,
            lr: config.seg_lr,
            batch_size: config.seg_batch_size,
            arch: SegArch::desk_scale(),
            threshold: 0.5,
            seed: config.seed,
        }
    }
}

/// Cosine decay: lr at epoch E of `epochs` total.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

/// 0.5 * soft-Dice loss + 0.5 * binary cross-entropy, both over the
/// whole batch.
pub fn dice_bce_loss(probs: &Tensor, targets: &Tensor) -> candle_core::Result<Tensor> {
    let eps = 1e-6;
    let intersection = (probs * targets)?.sum_all()?;
    let denom = (probs.sum_all()? + targets.sum_all()?)?;
    let dice = ((intersection * 2.0)? + eps)?.broadcast_div(&(denom + eps)?)?;
    let dice_loss = (1.0 - dice)?;

    let p = probs.clamp(1e-6f32, 1.0 - 1e-6)?;
    let bce = ((targets * p.log()?)? + ((1.0 - targets)? * (1.0 - &p)?.log()?)?)?
        .mean_all()?
        .neg()?;
    (dice_loss * 0.5)? + (bce * 0.5)?
}

fn batch_tensors(pairs: &[&SegPair], device: &Device) -> Result<(Tensor, Tensor)> {
    let (h, w) = (pairs[0].image.height(), pairs[0].image.width());
    let b = pairs.len();
    let mut images = Vec::with_capacity(b * h * w);
    let mut targets = Vec::with_capacity(b * h * w);
    for pair in pairs {
        images.extend_from_slice(pair.image.pixels());
        targets.extend(pair.mask.pixels().iter().map(|&m| if m { 1.0f32 } else { 0.0 }));
    }
    Ok((
        Tensor::from_vec(images, (b, 1, h, w), device)?,
        Tensor::from_vec(targets, (b, 1, h, w), device)?,
    ))
}

/// Batched foreground-probability prediction.
pub fn predict_probs(model: &SegUNet, images: &[&SliceImage], device: &Device) -> Result<Vec<Vec<f32>>> {
    let (h, w) = (images[0].height(), images[0].width());
    let flat: Vec<f32> = images.iter().flat_map(|s| s.pixels().iter().copied()).collect();
    let x = Tensor::from_vec(flat, (images.len(), 1, h, w), device)?;
    let probs = model.forward(&x)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(probs.chunks(h * w).map(|c| c.to_vec()).collect())
}

pub fn probs_to_mask(probs: &[f32], height: usize, width: usize, threshold: f32) -> BinaryMask {
    BinaryMask::new(probs.iter().map(|&p| p >= threshold).collect(), height, width)
}

pub struct TrainedSegmenter {
    pub model: SegUNet,
    pub varmap: VarMap,
    pub arch: SegArch,
    pub threshold: f32,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainedSegmenter {
    pub fn predict_mask(&self, image: &SliceImage, device: &Device) -> Result<BinaryMask> {
        let probs = predict_probs(&self.model, &[image], device)?;
        Ok(probs_to_mask(&probs[0], image.height(), image.width(), self.threshold))
    }
}

fn snapshot(varmap: &VarMap) -> Result<Vec<(String, Tensor)>> {
    let data = varmap.data().lock().unwrap();
    let mut out = Vec::with_capacity(data.len());
    for (name, var) in data.iter() {
        out.push((name.clone(), var.as_tensor().copy()?));
    }
    Ok(out)
}

fn restore(varmap: &VarMap, weights: &[(String, Tensor)]) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    for (name, tensor) in weights {
        data[name].set(tensor)?;
    }
    Ok(())
}

fn mean_val_dsc(
    model: &SegUNet,
    val: &[SegPair],
    threshold: f32,
    batch: usize,
    device: &Device,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in val.chunks(batch.max(1)) {
        let images: Vec<&SliceImage> = chunk.iter().map(|p| &p.image).collect();
        let probs = predict_probs(model, &images, device)?;
        for (pair, p) in chunk.iter().zip(&probs) {
            let predicted = probs_to_mask(p, pair.image.height(), pair.image.width(), threshold);
            total += dice_2d(&predicted, &pair.mask)?;
        }
    }
    Ok(total / val.len() as f64)
}

/// Train the segmentation network; returns the weights from the epoch
/// with the highest validation Dice (ties keep the earliest epoch).
pub fn train_segmenter(
    train: &[SegPair],
    val: &[SegPair],
    config: &SegTrainConfig,
    device: &Device,
) -> Result<TrainedSegmenter> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("segmentation train/val sets must be nonempty".into()));
    }
    let resolution = train[0].image.height();
    config.arch.validate(resolution)?;
    let (model, varmap) = build_seg_unet(&config.arch, device)?;
    crate::rng::reseed_varmap(&varmap, config.seed, "seg-init")?;
    let mut opt = AdamW::new(
        varmap.all_vars(),
        ParamsAdamW {
            lr: config.lr,
            ..Default::default()
        },
    )?;
    let mut rng = crate::rng::stream(config.seed, "seg-train");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Vec<(String, Tensor)>)> = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        opt.set_learning_rate(cosine_lr(config.lr, epoch, config.epochs));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let pairs: Vec<&SegPair> = chunk.iter().map(|&i| &train[i]).collect();
            let (images, targets) = batch_tensors(&pairs, device)?;
            let probs = model.forward(&images)?;
            let loss = dice_bce_loss(&probs, &targets)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::SegDiverged { epoch, loss: value });
            }
            opt.backward_step(&loss)?;
            epoch_loss += value;
            steps += 1;
        }
        epoch_loss /= steps as f64;
        epoch_losses.push(epoch_loss);

        let val_dsc = mean_val_dsc(&model, val, config.threshold, config.batch_size, device)?;
        println!(
            "stage=seg-train epoch={epoch} lr={:.6} loss={epoch_loss:.5} val_dsc={val_dsc:.4}",
            cosine_lr(config.lr, epoch, config.epochs)
        );
        if best.as_ref().map_or(true, |(_, dsc, _)| val_dsc > *dsc) {
            best = Some((epoch, val_dsc, snapshot(&varmap)?));
        }
    }

    let (best_epoch, best_val_dsc, weights) = best.expect("epochs >= 1");
    restore(&varmap, &weights)?;
    Ok(TrainedSegmenter {
        model,
        varmap,
        arch: config.arch,
        threshold: config.threshold,
        best_epoch,
        best_val_dsc,
        epoch_losses,
    })
}

/// Volumetric evaluation of precomputed per-volume mask stacks against
/// ground truth: 3-D Dice and ASSD per volume with mean ± SEM.
pub fn evaluate_masks(
    predicted: &[Vec<BinaryMask>],
    test_volumes: &[Volume],
    label: &str,
) -> Result<MetricReport> {
    assert_eq!(predicted.len(), test_volumes.len());
    let mut report = MetricReport::new(label);
    for (volume, prediction) in test_volumes.iter().zip(predicted) {
        let truth = volume.masks.as_ref().ok_or_else(|| {
            Error::MetricUndefined(format!("volume {} carries no masks", volume.volume_id))
        })?;
        report.dsc_per_volume.push(dice_3d(prediction, truth)?);
        match assd_3d(prediction, truth, volume.spacing) {
            Ok(assd) => report.assd_per_volume.push(assd),
            Err(e) => report
                .assd_missing
                .push(format!("{}: {e}", volume.volume_id)),
        }
    }
    report.summarize();
    Ok(report)
}

/// Run the segmenter over test volumes and evaluate volumetrically.
pub fn evaluate_segmenter(
    segmenter: &TrainedSegmenter,
    test_volumes: &[Volume],
    label: &str,
    device: &Device,
) -> Result<MetricReport> {
    let mut predicted = Vec::with_capacity(test_volumes.len());
    for volume in test_volumes {
        let mut stack = Vec::with_capacity(volume.slices.len());
        for slice in &volume.slices {
            stack.push(segmenter.predict_mask(slice, device)?);
        }
        predicted.push(stack);
    }
    evaluate_masks(&predicted, test_volumes, label)
}
