//! Spatially coherent volume translation: initial-slice candidate
//! generation and selection, sequential adjacent-conditioned slice
//! translation, and parallel volume-group execution.

use candle_core::Device;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Domain, RunConfig, SliceImage, Volume};
use crate::diffusion::conditioning::ConditioningBundle;
use crate::diffusion::sample::{ddim_sample_batch, ddpm_sample_batch, gaussian_latent, to_slice_image};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::slice_contour;
use crate::diffusion::unet::Denoiser;
use crate::error::{Error, Result};
use crate::imageproc::ContourMap;

/// Candidate translations of the first slice, ranked by mean intensity.
pub struct CandidateSet {
    samples: Vec<SliceImage>,
}

impl CandidateSet {
    pub fn new(samples: Vec<SliceImage>) -> Self {
        assert!(!samples.is_empty(), "candidate set requires n >= 1");
        CandidateSet { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the candidate with minimal mean intensity; ties resolve
    /// to the lowest index.
    pub fn selected_index(&self) -> usize {
        let mut best = 0;
        let mut best_mean = self.samples[0].mean();
        for (i, sample) in self.samples.iter().enumerate().skip(1) {
            let mean = sample.mean();
            if mean < best_mean {
                best = i;
                best_mean = mean;
            }
        }
        best
    }

    /// Index of the candidate at the given mean-intensity rank
    /// (0 = lowest mean). Equal means keep their original order.
    pub fn index_at_rank(&self, rank: usize) -> usize {
        assert!(rank < self.samples.len(), "rank out of range");
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.sort_by(|&a, &b| {
            self.samples[a]
                .mean()
                .partial_cmp(&self.samples[b].mean())
                .unwrap()
                .then(a.cmp(&b))
        });
        order[rank]
    }

    pub fn select(mut self) -> SliceImage {
        let index = self.selected_index();
        self.samples.swap_remove(index)
    }

    pub fn select_rank(mut self, rank: usize) -> SliceImage {
        let index = self.index_at_rank(rank);
        self.samples.swap_remove(index)
    }
}

/// Generate `n` independent first-slice samples with an empty adjacent
/// channel. The sampler is chosen by `config.initial_sampler`: "ddpm"
/// runs the stochastic full-schedule chain, "ddim-seeded" runs a
/// deterministic trajectory from per-candidate seeded latents.
pub fn generate_initial_candidates(
    model: &dyn Denoiser,
    contour: &ContourMap,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    device: &Device,
) -> Result<CandidateSet> {
    let n = config.n_candidates;
    let (h, w) = (contour.height(), contour.width());
    let bundles: Vec<ConditioningBundle> = (0..n)
        .map(|_| ConditioningBundle {
            contour: contour.clone(),
            adjacent: None,
        })
        .collect();
    let samples = match config.initial_sampler.as_str() {
        "ddpm" => ddpm_sample_batch(model, &bundles, schedule, rng, device)?,
        "ddim-seeded" => {
            let latents: Vec<Vec<f32>> = (0..n).map(|_| gaussian_latent(h * w, rng)).collect();
            ddim_sample_batch(model, &bundles, latents, schedule, config.ddim_steps, device)?
        }
        other => {
            return Err(Error::Config(format!(
                "initial_sampler `{other}` not one of {{ddpm, ddim-seeded}}"
            )))
        }
    };
    Ok(CandidateSet::new(
        samples.iter().map(|x| to_slice_image(x, h, w)).collect(),
    ))
}

/// Inference-time switches for ablation and robustness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranslationOptions {
    /// Condition each slice on the previously translated neighbor; off
    /// translates every slice independently (empty adjacent channel).
    pub adjacent_conditioning: bool,
    /// Mean-intensity rank of the initial candidate to keep (0 = lowest).
    pub candidate_rank: usize,
}

impl Default for TranslationOptions {
    fn default() -> Self {
        TranslationOptions {
            adjacent_conditioning: true,
            candidate_rank: 0,
        }
    }
}

/// Translate the first slice: generate `n_candidates` samples and keep
/// the one at the requested mean-intensity rank (default: lowest).
pub fn translate_initial_slice(
    model: &dyn Denoiser,
    contour: &ContourMap,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    rank: usize,
    rng: &mut ChaCha8Rng,
    device: &Device,
) -> Result<SliceImage> {
    let candidates = generate_initial_candidates(model, contour, config, schedule, rng, device)?;
    Ok(candidates.select_rank(rank))
}

/// Translate one volume: slice 0 via candidate selection, each later
/// slice via deterministic DDIM conditioned on (contour, previously
/// translated slice). Masks, ordering, and slice count carry over.
pub fn translate_volume(
    model: &dyn Denoiser,
    input_volume: &Volume,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    device: &Device,
) -> Result<Volume> {
    translate_volume_opts(
        model,
        input_volume,
        config,
        schedule,
        &TranslationOptions::default(),
        device,
    )
}

/// `translate_volume` with explicit inference options.
pub fn translate_volume_opts(
    model: &dyn Denoiser,
    input_volume: &Volume,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    options: &TranslationOptions,
    device: &Device,
) -> Result<Volume> {
    if input_volume.slices.is_empty() {
        return Err(Error::Config(format!(
            "volume {} has no slices",
            input_volume.volume_id
        )));
    }
    let mut rng = crate::rng::stream(
        config.seed,
        &format!("translate/{}", input_volume.volume_id),
    );
    let contours: Vec<ContourMap> = input_volume
        .slices
        .iter()
        .map(|slice| slice_contour(slice, input_volume.domain, config))
        .collect();

    let mut translated = Vec::with_capacity(input_volume.slices.len());
    translated.push(translate_initial_slice(
        model,
        &contours[0],
        config,
        schedule,
        options.candidate_rank,
        &mut rng,
        device,
    )?);
    for contour in &contours[1..] {
        let previous: &SliceImage = translated.last().expect("slice 0 translated");
        let bundle = ConditioningBundle {
            contour: contour.clone(),
            adjacent: if options.adjacent_conditioning {
                Some(previous.clone())
            } else {
                None
            },
        };
        let (h, w) = (contour.height(), contour.width());
        let latent = gaussian_latent(h * w, &mut rng);
        let out = ddim_sample_batch(
            model,
            std::slice::from_ref(&bundle),
            vec![latent],
            schedule,
            config.ddim_steps,
            device,
        )?;
        translated.push(to_slice_image(&out[0], h, w));
    }

    let mut volume = Volume::new(input_volume.volume_id.clone(), translated, Domain::Output);
    volume.spacing = input_volume.spacing;
    if let Some(masks) = &input_volume.masks {
        volume = volume.with_masks(masks.clone());
    }
    Ok(volume)
}

/// Even partition of `count` items into `n_groups` contiguous index
/// ranges; the remainder is spread one extra item per leading group.
pub fn partition_even(count: usize, n_groups: usize) -> Vec<std::ops::Range<usize>> {
    assert!(n_groups >= 1, "n_groups must be >= 1");
    let base = count / n_groups;
    let remainder = count % n_groups;
    let mut ranges = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g < remainder);
        ranges.push(start..start + size);
        start += size;
    }
    ranges
}

/// Outcome of a dataset translation: volumes that completed, in input
/// order, plus per-volume failures that did not stop the rest.
pub struct DatasetTranslation {
    pub volumes: Vec<Volume>,
    pub failures: Vec<(String, Error)>,
}

/// Translate a dataset with volumes partitioned evenly into `n_groups`
/// concurrent groups. Results are bit-identical to sequential execution
/// because every volume derives its own rng stream from its id.
pub fn translate_dataset(
    model: &(dyn Denoiser + Sync),
    volumes: &[Volume],
    n_groups: usize,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    device: &Device,
) -> Result<DatasetTranslation> {
    translate_dataset_opts(
        model,
        volumes,
        n_groups,
        config,
        schedule,
        &TranslationOptions::default(),
        device,
    )
}

/// `translate_dataset` with explicit inference options.
pub fn translate_dataset_opts(
    model: &(dyn Denoiser + Sync),
    volumes: &[Volume],
    n_groups: usize,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    options: &TranslationOptions,
    device: &Device,
) -> Result<DatasetTranslation> {
    if n_groups == 0 {
        return Err(Error::Config("n_groups must be >= 1".into()));
    }
    let ranges = partition_even(volumes.len(), n_groups);
    let mut slots: Vec<Option<Result<Volume>>> = (0..volumes.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (range, slot_chunk) in ranges
            .iter()
            .zip(chunk_slots(&mut slots, &ranges))
        {
            let group = &volumes[range.clone()];
            let device = device.clone();
            handles.push(scope.spawn(move || {
                for (volume, slot) in group.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(translate_volume_opts(
                        model, volume, config, schedule, options, &device,
                    ));
                }
            }));
        }
        for handle in handles {
            handle.join().expect("translation worker panicked");
        }
    });

    let mut out = DatasetTranslation {
        volumes: Vec::with_capacity(volumes.len()),
        failures: Vec::new(),
    };
    for (volume, slot) in volumes.iter().zip(slots) {
        match slot.expect("every slot filled") {
            Ok(translated) => out.volumes.push(translated),
            Err(e) => out.failures.push((volume.volume_id.clone(), e)),
        }
    }
    Ok(out)
}

/// Split the slot buffer into disjoint mutable chunks matching the
/// partition ranges, so worker threads can write without locking.
fn chunk_slots<'a>(
    slots: &'a mut [Option<Result<Volume>>],
    ranges: &[std::ops::Range<usize>],
) -> Vec<&'a mut [Option<Result<Volume>>]> {
    let mut chunks = Vec::with_capacity(ranges.len());
    let mut rest = slots;
    for range in ranges {
        let (head, tail) = rest.split_at_mut(range.len());
        chunks.push(head);
        rest = tail;
    }
    chunks
}

/// Mean absolute intensity difference between adjacent slices, averaged
/// over a volume; the coherence measure used in the adjacency ablation.
pub fn adjacent_coherence(volume: &Volume) -> f64 {
    assert!(volume.slices.len() >= 2, "coherence needs >= 2 slices");
    let mut total = 0.0;
    for pair in volume.slices.windows(2) {
        total += pair[0].mean_abs_diff(&pair[1]) as f64;
    }
    total / (volume.slices.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::BitDepth;
    use crate::diffusion::schedule::build_schedule;
    use candle_core::Tensor;

    fn constant_slice(value: f32, side: usize) -> SliceImage {
        SliceImage::constant(value, side, side)
    }

    #[test]
    fn selection_is_argmin_with_low_index_ties() {
        let set = CandidateSet::new(vec![
            constant_slice(0.9, 4),
            constant_slice(0.3, 4),
            constant_slice(0.5, 4),
        ]);
        assert_eq!(set.selected_index(), 1);
        assert_eq!(set.select().mean(), 0.3);

        let tied = CandidateSet::new(vec![
            constant_slice(0.5, 4),
            constant_slice(0.2, 4),
            constant_slice(0.2, 4),
        ]);
        assert_eq!(tied.selected_index(), 1);
    }

    #[test]
    fn selection_invariant_under_positive_scaling() {
        let means = [0.81f32, 0.27, 0.54, 0.36];
        for scale in [0.5f32, 1.0, 1.1] {
            let set = CandidateSet::new(
                means.iter().map(|&m| constant_slice(m * scale, 4)).collect(),
            );
            assert_eq!(set.selected_index(), 1, "scale {scale}");
        }
    }

    #[test]
    fn rank_selection_orders_by_mean() {
        let set = CandidateSet::new(vec![
            constant_slice(0.9, 4),
            constant_slice(0.3, 4),
            constant_slice(0.5, 4),
        ]);
        assert_eq!(set.index_at_rank(0), 1);
        assert_eq!(set.index_at_rank(1), 2);
        assert_eq!(set.index_at_rank(2), 0);
    }

    #[test]
    fn partition_spreads_remainder() {
        let sizes =
            |count, groups| -> Vec<usize> { partition_even(count, groups).iter().map(|r| r.len()).collect() };
        assert_eq!(sizes(7, 3), vec![3, 2, 2]);
        assert_eq!(sizes(6, 3), vec![2, 2, 2]);
        assert_eq!(sizes(5, 1), vec![5]);
        assert_eq!(sizes(2, 4), vec![1, 1, 0, 0]);
        assert_eq!(sizes(0, 2), vec![0, 0]);
    }

    /// Linear fake denoiser so translation runs without training.
    struct ScaleDenoiser(f64);

    impl Denoiser for ScaleDenoiser {
        fn predict(
            &self,
            x_t: &Tensor,
            _t: &[usize],
            _cond: &Tensor,
        ) -> candle_core::Result<Tensor> {
            x_t * self.0
        }
    }

    fn test_volume(id: &str, slices: usize, side: usize) -> Volume {
        let images = (0..slices)
            .map(|i| {
                let mut pixels = vec![0.2f32; side * side];
                for r in side / 4..side / 2 + i {
                    for c in side / 4..side / 2 {
                        pixels[r * side + c] = 0.8;
                    }
                }
                SliceImage::new(pixels, side, side, BitDepth::Eight)
            })
            .collect();
        Volume::new(id, images, Domain::Input)
    }

    fn small_config() -> RunConfig {
        let mut config = RunConfig::desk_scale();
        config.resolution = 16;
        config.t_steps = 20;
        config.ddim_steps = 5;
        config.n_candidates = 3;
        config
    }

    #[test]
    fn single_candidate_returned_unconditionally() {
        let device = Device::Cpu;
        let mut config = small_config();
        config.n_candidates = 1;
        let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max).unwrap();
        let contour = slice_contour(&test_volume("v", 1, 16).slices[0], Domain::Input, &config);
        let mut rng = crate::rng::stream(7, "single-candidate");
        let set = generate_initial_candidates(
            &ScaleDenoiser(0.1),
            &contour,
            &config,
            &schedule,
            &mut rng,
            &device,
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.selected_index(), 0);
    }

    #[test]
    fn translate_volume_preserves_count_order_and_range() {
        let device = Device::Cpu;
        let config = small_config();
        let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max).unwrap();
        let volume = test_volume("vol_a", 4, 16);
        let out = translate_volume(&ScaleDenoiser(0.2), &volume, &config, &schedule, &device).unwrap();
        assert_eq!(out.slices.len(), 4);
        assert_eq!(out.volume_id, "vol_a");
        assert_eq!(out.domain, Domain::Output);
        for slice in &out.slices {
            assert!(slice.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn group_count_never_changes_results() {
        let device = Device::Cpu;
        let config = small_config();
        let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max).unwrap();
        let volumes: Vec<Volume> = (0..5).map(|i| test_volume(&format!("v{i}"), 3, 16)).collect();
        let model = ScaleDenoiser(0.25);
        let run = |groups| {
            translate_dataset(&model, &volumes, groups, &config, &schedule, &device).unwrap()
        };
        let sequential = run(1);
        let parallel = run(4);
        assert!(sequential.failures.is_empty() && parallel.failures.is_empty());
        assert_eq!(sequential.volumes.len(), parallel.volumes.len());
        for (a, b) in sequential.volumes.iter().zip(&parallel.volumes) {
            assert_eq!(a.volume_id, b.volume_id);
            for (sa, sb) in a.slices.iter().zip(&b.slices) {
                assert_eq!(sa.pixels(), sb.pixels());
            }
        }
    }

    #[test]
    fn ddpm_and_ddim_initial_samplers_both_run() {
        let device = Device::Cpu;
        let schedule = build_schedule(20, 1e-4, 0.02).unwrap();
        let contour = slice_contour(&test_volume("v", 1, 16).slices[0], Domain::Input, &small_config());
        for sampler in ["ddpm", "ddim-seeded"] {
            let mut config = small_config();
            config.initial_sampler = sampler.to_string();
            let mut rng = crate::rng::stream(3, "samplers");
            let set = generate_initial_candidates(
                &ScaleDenoiser(0.1),
                &contour,
                &config,
                &schedule,
                &mut rng,
                &device,
            )
            .unwrap();
            assert_eq!(set.len(), config.n_candidates);
        }
    }

    #[test]
    fn coherence_measures_adjacent_difference() {
        let flat = Volume::new(
            "flat",
            vec![constant_slice(0.4, 8), constant_slice(0.4, 8), constant_slice(0.4, 8)],
            Domain::Output,
        );
        assert_eq!(adjacent_coherence(&flat), 0.0);
        let jumpy = Volume::new(
            "jumpy",
            vec![constant_slice(0.1, 8), constant_slice(0.9, 8)],
            Domain::Output,
        );
        assert!((adjacent_coherence(&jumpy) - 0.8).abs() < 1e-6);
    }
}
