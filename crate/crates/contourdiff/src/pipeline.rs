//! End-to-end workflow stages shared by the CLI and the experiment
//! harness: input perturbation, dataset translation, segmentation
//! transfer, and the evaluation reports that tie them together.

use std::collections::HashMap;

use candle_core::Device;

use crate::dataio::{Domain, RunConfig, Volume};
use crate::diffusion::train::{slice_contour, train_translator, TrainedTranslator};
use crate::error::{Error, Result};
use crate::imageproc::{add_noise_snr, adjust_contrast, canny};
use crate::metrics::{
    extract_foreground, feature_embed, fid, hd95, kid, points_from_coords, MetricReport,
    RandomProjectionExtractor,
};
use crate::phantom::PhantomDataset;
use crate::scgd::{translate_dataset_opts, DatasetTranslation, TranslationOptions};
use crate::segharness::{
    evaluate_segmenter, pairs_from_volumes, train_segmenter, SegTrainConfig, TrainedSegmenter,
};

/// Split volumes into training and validation partitions; validation
/// takes the trailing fifth (at least one volume).
pub fn split_train_val(volumes: &[Volume]) -> (&[Volume], &[Volume]) {
    assert!(volumes.len() >= 2, "need >= 2 volumes to split");
    let n_val = (volumes.len() / 5).max(1);
    volumes.split_at(volumes.len() - n_val)
}

/// The held-out labeled output-domain volumes, split into an
/// upper-bound training half and the shared test half.
pub fn heldout_split(dataset: &PhantomDataset) -> (&[Volume], &[Volume]) {
    let volumes = &dataset.output_heldout;
    volumes.split_at(volumes.len() / 2)
}

/// Train a segmenter on labeled volumes and evaluate it volumetrically
/// on the test volumes.
pub fn seg_transfer(
    train_volumes: &[Volume],
    test_volumes: &[Volume],
    config: &RunConfig,
    label: &str,
    device: &Device,
) -> Result<(TrainedSegmenter, MetricReport)> {
    let (train, val) = split_train_val(train_volumes);
    let train_pairs = pairs_from_volumes(train)?;
    let val_pairs = pairs_from_volumes(val)?;
    let seg_config = SegTrainConfig::from_run(config);
    let segmenter = train_segmenter(&train_pairs, &val_pairs, &seg_config, device)?;
    let report = evaluate_segmenter(&segmenter, test_volumes, label, device)?;
    Ok((segmenter, report))
}

/// Per-slice edge HD95 between the input contours and the contours of
/// the translated slices; slices whose edge set is empty on either side
/// are reported missing.
pub fn edge_alignment_report(
    inputs: &[Volume],
    translated: &[Volume],
    config: &RunConfig,
    label: &str,
) -> Result<MetricReport> {
    assert_eq!(inputs.len(), translated.len());
    let mut report = MetricReport::new(label);
    let (low, high) = config.canny_thresholds(Domain::Output);
    for (input, output) in inputs.iter().zip(translated) {
        for (i, (in_slice, out_slice)) in input.slices.iter().zip(&output.slices).enumerate() {
            let c_in = slice_contour(in_slice, input.domain, config);
            // Translated slices are clean model output; no artifact filter.
            let c_out = canny(out_slice, low, high, config.canny_sigma);
            let a = points_from_coords(&c_in.points());
            let b = points_from_coords(&c_out.points());
            match hd95(&a, &b) {
                Ok(value) => report.hd95_per_slice.push(value),
                Err(e) => report
                    .hd95_missing
                    .push(format!("{} slice {i}: {e}", input.volume_id)),
            }
        }
    }
    report.summarize();
    Ok(report)
}

/// Foreground FID and KID between two labeled volume sets: masks zero
/// the background before featurization.
pub fn foreground_fid_kid(a: &[Volume], b: &[Volume], seed: u64) -> Result<(f64, f64)> {
    let foreground_slices = |volumes: &[Volume]| -> Result<Vec<crate::dataio::SliceImage>> {
        let mut slices = Vec::new();
        for volume in volumes {
            let masks = volume.masks.as_ref().ok_or_else(|| {
                Error::MetricUndefined(format!("volume {} carries no masks", volume.volume_id))
            })?;
            for (slice, mask) in volume.slices.iter().zip(masks) {
                slices.push(extract_foreground(slice, mask));
            }
        }
        Ok(slices)
    };
    let extractor = RandomProjectionExtractor::new(crate::rng::derive_seed(seed, "fid"), 64);
    let fa = feature_embed(&foreground_slices(a)?, &extractor);
    let fb = feature_embed(&foreground_slices(b)?, &extractor);
    Ok((fid(&fa, &fb)?, kid(&fa, &fb)?))
}

/// Apply the robustness perturbations to every slice: contrast first
/// (Eq.-9 style affine around the slice mean), then SNR-calibrated
/// Gaussian noise. `None` leaves the corresponding perturbation off.
pub fn perturb_volumes(
    volumes: &[Volume],
    snr_db: Option<f64>,
    contrast: Option<f32>,
    seed: u64,
) -> Vec<Volume> {
    volumes
        .iter()
        .map(|volume| {
            let mut rng = crate::rng::stream(seed, &format!("perturb/{}", volume.volume_id));
            let slices = volume
                .slices
                .iter()
                .map(|slice| {
                    let slice = match contrast {
                        Some(k) => adjust_contrast(slice, k),
                        None => slice.clone(),
                    };
                    match snr_db {
                        Some(db) => add_noise_snr(&slice, db, &mut rng),
                        None => slice,
                    }
                })
                .collect();
            let mut out = Volume::new(volume.volume_id.clone(), slices, volume.domain);
            out.spacing = volume.spacing;
            if let Some(masks) = &volume.masks {
                out = out.with_masks(masks.clone());
            }
            out
        })
        .collect()
}

/// Requantize pixels to `bit_depth` levels, emulating acquisition at a
/// different source bit depth before unit normalization.
pub fn quantize_volumes(volumes: &[Volume], bit_depth: u8) -> Vec<Volume> {
    let max = ((1u32 << bit_depth) - 1) as f32;
    volumes
        .iter()
        .map(|volume| {
            let slices = volume
                .slices
                .iter()
                .map(|slice| {
                    let pixels = slice
                        .pixels()
                        .iter()
                        .map(|&p| (p * max).round() / max)
                        .collect();
                    crate::dataio::SliceImage::new(
                        pixels,
                        slice.height(),
                        slice.width(),
                        crate::dataio::BitDepth::Eight,
                    )
                })
                .collect();
            let mut out = Volume::new(volume.volume_id.clone(), slices, volume.domain);
            out.spacing = volume.spacing;
            if let Some(masks) = &volume.masks {
                out = out.with_masks(masks.clone());
            }
            out
        })
        .collect()
}

/// Inference- and preprocessing-side switches for one pipeline setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOptions {
    pub translation: TranslationOptions,
    pub snr_db: Option<f64>,
    pub contrast: Option<f32>,
    pub bit_depth: Option<u8>,
    pub n_groups: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            translation: TranslationOptions::default(),
            snr_db: None,
            contrast: None,
            bit_depth: None,
            n_groups: 1,
        }
    }
}

/// Translate labeled source volumes under the given options:
/// quantization and perturbations first, then contour-guided sampling.
pub fn translate_with_options(
    model: &(dyn crate::diffusion::unet::Denoiser + Sync),
    schedule: &crate::diffusion::schedule::NoiseSchedule,
    volumes: &[Volume],
    config: &RunConfig,
    options: &StageOptions,
    device: &Device,
) -> Result<DatasetTranslation> {
    let mut prepared: Vec<Volume> = volumes.to_vec();
    if let Some(bits) = options.bit_depth {
        prepared = quantize_volumes(&prepared, bits);
    }
    if options.snr_db.is_some() || options.contrast.is_some() {
        prepared = perturb_volumes(&prepared, options.snr_db, options.contrast, config.seed);
    }
    translate_dataset_opts(
        model,
        &prepared,
        options.n_groups,
        config,
        schedule,
        &options.translation,
        device,
    )
}

/// One pipeline setting end to end: prepare and translate the labeled
/// source volumes, train a segmenter on the translations, evaluate on
/// the shared test half. Fails if any volume failed to translate.
pub fn run_setting(
    translator: &TrainedTranslator,
    dataset: &PhantomDataset,
    config: &RunConfig,
    options: &StageOptions,
    label: &str,
    device: &Device,
) -> Result<MetricReport> {
    let translation = translate_with_options(
        &translator.model,
        &translator.schedule,
        &dataset.input_train,
        config,
        options,
        device,
    )?;
    if let Some((volume_id, error)) = translation.failures.first() {
        return Err(Error::Translation {
            volume_id: volume_id.clone(),
            slice: 0,
            message: error.to_string(),
        });
    }
    let (_, test) = heldout_split(dataset);
    let (_, report) = seg_transfer(&translation.volumes, test, config, label, device)?;
    Ok(report)
}

/// The configuration fields that determine translator training; two
/// configs with equal keys can share one trained translator. Training
/// sees only output-domain volumes, so the input-domain Canny
/// thresholds (an inference-side setting) are deliberately excluded.
pub fn translator_training_key(config: &RunConfig) -> String {
    format!(
        "res={} T={} beta=({},{}) p_adj={} canny_out=({},{}) sigma={} filter={} wf={} steps={} batch={} lr={} seed={}",
        config.resolution,
        config.t_steps,
        config.beta_min,
        config.beta_max,
        config.p_adj,
        config.canny_low_output,
        config.canny_high_output,
        config.canny_sigma,
        config.artifact_filter,
        config.width_factor,
        config.train_steps,
        config.batch_size,
        config.lr,
        config.seed,
    )
}

/// Cache of trained translators keyed by their training configuration,
/// so experiment sweeps over inference-only axes train once.
#[derive(Default)]
pub struct TranslatorCache {
    translators: HashMap<String, TrainedTranslator>,
}

impl TranslatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_train(
        &mut self,
        volumes: &[Volume],
        config: &RunConfig,
        device: &Device,
    ) -> Result<&TrainedTranslator> {
        let key = translator_training_key(config);
        if !self.translators.contains_key(&key) {
            println!("stage=translator-train key=[{key}]");
            let translator = train_translator(volumes, config, device)?;
            self.translators.insert(key.clone(), translator);
        }
        Ok(&self.translators[&key])
    }
}
