//! Contour extraction, artifact filtering and controlled perturbations.

mod canny;
mod filter;
mod perturb;

pub use canny::{canny, ContourMap};
pub use filter::{apply_filter_mask, area_threshold, artifact_filter_mask, FilterMask};
pub use perturb::{add_noise_snr, add_noise_snr_unclamped, adjust_contrast, adjust_contrast_unclamped};

/// Number of 4-connected foreground components.
pub fn count_components(mask: &[bool], height: usize, width: usize) -> usize {
    let (_, areas) = filter::label_components(mask, height, width);
    areas.len() - 1
}
