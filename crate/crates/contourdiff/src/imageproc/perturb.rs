//! Controlled perturbations for robustness studies.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataio::SliceImage;

/// Additive zero-mean Gaussian noise at a target SNR (dB), no clamping.
/// Noise variance is `P_signal / 10^(snr_db / 10)` with `P_signal` the mean
/// squared intensity of the slice.
pub fn add_noise_snr_unclamped<R: Rng>(slice: &SliceImage, snr_db: f64, rng: &mut R) -> Vec<f32> {
    assert!(!slice.pixels().is_empty(), "slice must be nonempty");
    let p_signal: f64 = slice.pixels().iter().map(|&p| (p as f64).powi(2)).sum::<f64>()
        / slice.pixels().len() as f64;
    let p_noise = p_signal / 10f64.powf(snr_db / 10.0);
    let sigma = p_noise.sqrt() as f32;
    slice
        .pixels()
        .iter()
        .map(|&p| p + sigma * rng.sample::<f32, _>(StandardNormal))
        .collect()
}

/// Noisy slice clamped back into `[0, 1]`.
pub fn add_noise_snr<R: Rng>(slice: &SliceImage, snr_db: f64, rng: &mut R) -> SliceImage {
    let noisy = add_noise_snr_unclamped(slice, snr_db, rng);
    SliceImage::new(
        noisy.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        slice.height(),
        slice.width(),
        slice.source_bit_depth,
    )
}

/// Linear contrast transform `I' = c + k (I - c)` around the slice mean, no
/// clamping. Computed in f64 so `k = 1` is an exact identity after the
/// round-trip back to f32.
pub fn adjust_contrast_unclamped(slice: &SliceImage, k: f32) -> Vec<f32> {
    assert!(k >= 0.0, "contrast factor must be non-negative");
    let mean = slice.pixels().iter().map(|&p| p as f64).sum::<f64>() / slice.pixels().len() as f64;
    let k = k as f64;
    slice
        .pixels()
        .iter()
        .map(|&p| (mean + k * (p as f64 - mean)) as f32)
        .collect()
}

pub fn adjust_contrast(slice: &SliceImage, k: f32) -> SliceImage {
    let adjusted = adjust_contrast_unclamped(slice, k);
    SliceImage::new(
        adjusted.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        slice.height(),
        slice.width(),
        slice.source_bit_depth,
    )
}
