//! Non-anatomical artifact filtering.
//!
//! Pipeline: three-class Otsu threshold (keep the two upper classes),
//! 3x3-cross binary erosion, removal of small connected components, then
//! filling of small holes. The retained-anatomy mask is applied as
//! `x <- mask * x`.

use crate::dataio::SliceImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    pixels: Vec<bool>,
    height: usize,
    width: usize,
}

impl FilterMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

/// Small-object / small-hole area threshold: 64 px at 256x256, scaled by
/// the squared resolution ratio.
pub fn area_threshold(resolution: usize) -> usize {
    let scaled = 64.0 * (resolution as f64 / 256.0).powi(2);
    (scaled.round() as usize).max(1)
}

/// Two thresholds (bin indices) maximizing between-class variance for a
/// three-class split of a 256-bin histogram.
fn multi_otsu_thresholds(histogram: &[u64; 256]) -> Option<(usize, usize)> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return None;
    }
    let nonzero = histogram.iter().filter(|&&h| h > 0).count();
    if nonzero < 2 {
        return None;
    }

    let mut cum_count = [0u64; 257];
    let mut cum_sum = [0f64; 257];
    for i in 0..256 {
        cum_count[i + 1] = cum_count[i] + histogram[i];
        cum_sum[i + 1] = cum_sum[i] + histogram[i] as f64 * i as f64;
    }
    let class_score = |lo: usize, hi: usize| -> f64 {
        // Between-class variance contribution w * mu^2 of bins [lo, hi).
        let count = (cum_count[hi] - cum_count[lo]) as f64;
        if count == 0.0 {
            return 0.0;
        }
        let sum = cum_sum[hi] - cum_sum[lo];
        sum * sum / count
    };

    // Only partitions with three non-empty classes are considered;
    // otherwise degenerate splits (an empty lowest class) would tie with
    // the intended one and retain the background.
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for t1 in 1..255 {
        if cum_count[t1] == 0 {
            continue;
        }
        for t2 in (t1 + 1)..256 {
            if cum_count[t2] - cum_count[t1] == 0 {
                continue;
            }
            if cum_count[256] - cum_count[t2] == 0 {
                break;
            }
            let score = class_score(0, t1) + class_score(t1, t2) + class_score(t2, 256);
            if score > best_score {
                best_score = score;
                best = Some((t1, t2));
            }
        }
    }
    if best.is_some() {
        return best;
    }
    // Two distinct intensities only: fall back to a single Otsu threshold
    // and treat everything above it as the retained upper classes.
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for t in 1..256 {
        if cum_count[t] == 0 || cum_count[256] - cum_count[t] == 0 {
            continue;
        }
        let score = class_score(0, t) + class_score(t, 256);
        if score > best_score {
            best_score = score;
            best = Some((t, 255));
        }
    }
    best
}

fn erode_cross(mask: &mut Vec<bool>, height: usize, width: usize) {
    let src = mask.clone();
    let at = |r: i64, c: i64| -> bool {
        if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
            // Out-of-image counts as background so the mask shrinks at borders.
            false
        } else {
            src[(r as usize) * width + c as usize]
        }
    };
    for r in 0..height as i64 {
        for c in 0..width as i64 {
            mask[(r as usize) * width + c as usize] = at(r, c)
                && at(r - 1, c)
                && at(r + 1, c)
                && at(r, c - 1)
                && at(r, c + 1);
        }
    }
}

/// 4-connected component labels; 0 is unlabeled. Returns (labels, areas).
pub(crate) fn label_components(mask: &[bool], height: usize, width: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut areas = vec![0usize]; // areas[0] unused
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32;
        let mut area = 0usize;
        labels[start] = label;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            area += 1;
            let (r, c) = (idx / width, idx % width);
            let mut visit = |nr: i64, nc: i64| {
                if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                    return;
                }
                let nidx = (nr as usize) * width + nc as usize;
                if mask[nidx] && labels[nidx] == 0 {
                    labels[nidx] = label;
                    stack.push(nidx);
                }
            };
            visit(r as i64 - 1, c as i64);
            visit(r as i64 + 1, c as i64);
            visit(r as i64, c as i64 - 1);
            visit(r as i64, c as i64 + 1);
        }
        areas.push(area);
    }
    (labels, areas)
}

fn remove_small_objects(mask: &mut [bool], height: usize, width: usize, min_area: usize) {
    let (labels, areas) = label_components(mask, height, width);
    for (idx, &label) in labels.iter().enumerate() {
        if label != 0 && areas[label as usize] < min_area {
            mask[idx] = false;
        }
    }
}

fn remove_small_holes(mask: &mut [bool], height: usize, width: usize, min_area: usize) {
    let inverted: Vec<bool> = mask.iter().map(|&p| !p).collect();
    let (labels, areas) = label_components(&inverted, height, width);
    for (idx, &label) in labels.iter().enumerate() {
        if label != 0 && areas[label as usize] < min_area {
            mask[idx] = true;
        }
    }
}

pub fn artifact_filter_mask(slice: &SliceImage) -> FilterMask {
    let (h, w) = (slice.height(), slice.width());
    let mut histogram = [0u64; 256];
    for &p in slice.pixels() {
        let bin = (p.clamp(0.0, 1.0) * 255.0).round() as usize;
        histogram[bin.min(255)] += 1;
    }

    let mut pixels = match multi_otsu_thresholds(&histogram) {
        Some((t1, _t2)) => {
            // Retain the union of the two upper classes.
            slice
                .pixels()
                .iter()
                .map(|&p| ((p.clamp(0.0, 1.0) * 255.0).round() as usize) >= t1)
                .collect::<Vec<bool>>()
        }
        // Degenerate histogram: nothing to separate.
        None => return FilterMask { pixels: vec![false; h * w], height: h, width: w },
    };

    erode_cross(&mut pixels, h, w);
    let min_area = area_threshold(h.max(w));
    remove_small_objects(&mut pixels, h, w, min_area);
    remove_small_holes(&mut pixels, h, w, min_area);
    FilterMask { pixels, height: h, width: w }
}

/// `x <- mask * x`
pub fn apply_filter_mask(slice: &SliceImage, mask: &FilterMask) -> SliceImage {
    assert_eq!(slice.height(), mask.height());
    assert_eq!(slice.width(), mask.width());
    let pixels = slice
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    SliceImage::new(pixels, slice.height(), slice.width(), slice.source_bit_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::BitDepth;

    fn disk_image(h: usize, w: usize, cy: f32, cx: f32, radius: f32, fg: f32, bg: f32) -> Vec<f32> {
        let mut pixels = vec![bg; h * w];
        for r in 0..h {
            for c in 0..w {
                let dy = r as f32 - cy;
                let dx = c as f32 - cx;
                if dy * dy + dx * dx <= radius * radius {
                    pixels[r * w + c] = fg;
                }
            }
        }
        pixels
    }

    #[test]
    fn all_zero_slice_gives_all_false_mask() {
        let slice = SliceImage::constant(0.0, 16, 16);
        let mask = artifact_filter_mask(&slice);
        assert_eq!(mask.count(), 0);
        let filtered = apply_filter_mask(&slice, &mask);
        assert!(filtered.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn constant_slice_gives_all_false_mask() {
        let mask = artifact_filter_mask(&SliceImage::constant(0.7, 16, 16));
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn large_disk_retained_small_speck_removed() {
        // 256x256 so the area threshold is the reference 64 px.
        let mut pixels = disk_image(256, 256, 128.0, 100.0, 40.0, 0.9, 0.05);
        // 3x3 speck (area 9 < 64, and eroded to 1 px anyway).
        for r in 200..203 {
            for c in 220..223 {
                pixels[r * 256 + c] = 0.9;
            }
        }
        let slice = SliceImage::new(pixels, 256, 256, BitDepth::Eight);
        let mask = artifact_filter_mask(&slice);
        assert!(mask.get(128, 100), "disk interior retained");
        for r in 199..204 {
            for c in 219..224 {
                assert!(!mask.get(r, c), "speck removed at ({r}, {c})");
            }
        }
        // Connected-component oracle: exactly one retained component.
        let (_, areas) = label_components(mask.pixels(), 256, 256);
        assert_eq!(areas.len() - 1, 1);
    }

    #[test]
    fn small_hole_inside_disk_is_filled() {
        let mut pixels = disk_image(256, 256, 128.0, 128.0, 40.0, 0.9, 0.05);
        // 2-px dark hole.
        pixels[128 * 256 + 128] = 0.05;
        pixels[128 * 256 + 129] = 0.05;
        let slice = SliceImage::new(pixels, 256, 256, BitDepth::Eight);
        let mask = artifact_filter_mask(&slice);
        assert!(mask.get(128, 128) && mask.get(128, 129), "hole filled");
        // Flood-fill oracle: background reachable from the border must not
        // contain any pixel the mask marks false inside the disk bounding box.
        let inverted: Vec<bool> = mask.pixels().iter().map(|&p| !p).collect();
        let (labels, _) = label_components(&inverted, 256, 256);
        let border_label = labels[0];
        for r in 100..157 {
            for c in 100..157 {
                let idx = r * 256 + c;
                if !mask.pixels()[idx] {
                    assert_eq!(labels[idx], border_label, "no enclosed hole at ({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn refiltering_only_trims_near_the_boundary() {
        let pixels = disk_image(128, 128, 64.0, 64.0, 30.0, 0.85, 0.1);
        let slice = SliceImage::new(pixels, 128, 128, BitDepth::Eight);
        let mask = artifact_filter_mask(&slice);
        let filtered = apply_filter_mask(&slice, &mask);
        let mask2 = artifact_filter_mask(&filtered);
        assert!(mask2.get(64, 64), "disk center must survive refiltering");
        // Erosion trims each pass, but only at the edge: every pixel lost
        // on the second pass sits within 2 px of the first mask's boundary.
        for r in 0..128usize {
            for c in 0..128usize {
                if mask.get(r, c) && !mask2.get(r, c) {
                    let mut near_boundary = false;
                    for dr in -2i64..=2 {
                        for dc in -2i64..=2 {
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            if nr < 0 || nc < 0 || nr >= 128 || nc >= 128 {
                                near_boundary = true;
                            } else if !mask.get(nr as usize, nc as usize) {
                                near_boundary = true;
                            }
                        }
                    }
                    assert!(near_boundary, "interior pixel lost at ({r}, {c})");
                }
            }
        }
        assert!(mask2.count() as f64 >= 0.8 * mask.count() as f64);
    }

    #[test]
    fn area_threshold_scales_quadratically() {
        assert_eq!(area_threshold(256), 64);
        assert_eq!(area_threshold(64), 4);
        assert_eq!(area_threshold(32), 1);
        assert_eq!(area_threshold(512), 256);
    }
}
