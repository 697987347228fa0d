//! Volumetric and distributional evaluation metrics.

mod features;
mod report;
mod surface;

pub use features::{feature_embed, fid, kid, FeatureExtractor, FeatureSet, RandomProjectionExtractor};
pub use report::{mean_sem, MetricReport, MetricSummary};
pub use surface::{
    assd_2d, assd_3d, hd95, points_from_coords, surface_points_2d, surface_points_3d, Point,
    SurfacePointSet,
};

use crate::dataio::{BinaryMask, SliceImage};
use crate::error::{Error, Result};

fn dice_counts(intersection: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        // Both empty: perfect agreement by convention.
        return 1.0;
    }
    2.0 * intersection as f64 / (a + b) as f64
}

/// Dice overlap of two 2-D masks.
pub fn dice_2d(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.height(), a.width()),
            actual: format!("{}x{}", b.height(), b.width()),
            context: "dice".into(),
        });
    }
    let intersection = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .filter(|(&x, &y)| x && y)
        .count();
    Ok(dice_counts(intersection, a.count(), b.count()))
}

/// Dice overlap of two volumetric mask stacks.
pub fn dice_3d(a: &[BinaryMask], b: &[BinaryMask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} slices", a.len()),
            actual: format!("{} slices", b.len()),
            context: "dice_3d".into(),
        });
    }
    let mut intersection = 0;
    let mut count_a = 0;
    let mut count_b = 0;
    for (ma, mb) in a.iter().zip(b) {
        if !ma.same_shape(mb) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", ma.height(), ma.width()),
                actual: format!("{}x{}", mb.height(), mb.width()),
                context: "dice_3d slice".into(),
            });
        }
        intersection += ma
            .pixels()
            .iter()
            .zip(mb.pixels())
            .filter(|(&x, &y)| x && y)
            .count();
        count_a += ma.count();
        count_b += mb.count();
    }
    Ok(dice_counts(intersection, count_a, count_b))
}

/// Zero out background pixels before featurization.
pub fn extract_foreground(image: &SliceImage, mask: &BinaryMask) -> SliceImage {
    assert_eq!(image.height(), mask.height());
    assert_eq!(image.width(), mask.width());
    let pixels = image
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    SliceImage::new(pixels, image.height(), image.width(), image.source_bit_depth)
}
