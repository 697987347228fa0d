//! Conditioning channels for the denoiser: a contour channel and an
//! optional adjacent-slice channel.
//!
//! Both channels are encoded into the model's working range `[-1, 1]`;
//! an absent adjacent slice is encoded as the constant -1 plane.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::SliceImage;
use crate::imageproc::ContourMap;

/// Conditioning for one denoiser call. `adjacent` holds pixel intensities
/// in `[0, 1]`; `None` means the empty channel.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    pub contour: ContourMap,
    pub adjacent: Option<SliceImage>,
}

impl ConditioningBundle {
    /// Channel-packed encoding, `2 * h * w` values: contour as +/-1,
    /// adjacent slice rescaled to `[-1, 1]` (or all -1 when absent).
    pub fn encode(&self) -> Vec<f32> {
        let n = self.contour.height() * self.contour.width();
        let mut out = Vec::with_capacity(2 * n);
        out.extend(
            self.contour
                .pixels()
                .iter()
                .map(|&on| if on { 1.0f32 } else { -1.0 }),
        );
        match &self.adjacent {
            Some(slice) => {
                assert_eq!(slice.pixels().len(), n, "adjacent slice shape mismatch");
                out.extend(slice.pixels().iter().map(|&p| 2.0 * p - 1.0));
            }
            None => out.extend(std::iter::repeat(-1.0f32).take(n)),
        }
        out
    }
}

/// Draw the adjacent-slice channel for training: with probability `p_adj`
/// a real neighboring slice (chosen with equal probability when both
/// neighbors exist), otherwise the empty channel. Slices without any
/// neighbor always get the empty channel.
pub fn sample_adjacent<'a>(
    prev: Option<&'a SliceImage>,
    next: Option<&'a SliceImage>,
    p_adj: f64,
    rng: &mut ChaCha8Rng,
) -> Option<&'a SliceImage> {
    assert!((0.0..=1.0).contains(&p_adj));
    if prev.is_none() && next.is_none() {
        return None;
    }
    if rng.gen_range(0.0..1.0) >= p_adj {
        return None;
    }
    match (prev, next) {
        (Some(p), Some(n)) => {
            if rng.gen_range(0.0..1.0) < 0.5 {
                Some(p)
            } else {
                Some(n)
            }
        }
        (Some(p), None) => Some(p),
        (None, Some(n)) => Some(n),
        (None, None) => unreachable!(),
    }
}
