//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and double-threshold hysteresis.
//!
//! Thresholds are interpreted on the 0-255 intensity scale against the
//! unnormalized Sobel L2 magnitude, matching the common OpenCV convention
//! the reference threshold pairs (30/50, 50/100) were chosen for.

use crate::dataio::SliceImage;

/// One-pixel-wide binary edge map.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourMap {
    pixels: Vec<bool>,
    height: usize,
    width: usize,
    pub low_threshold: f32,
    pub high_threshold: f32,
}

impl ContourMap {
    pub fn new(
        pixels: Vec<bool>,
        height: usize,
        width: usize,
        low_threshold: f32,
        high_threshold: f32,
    ) -> Self {
        assert_eq!(pixels.len(), height * width, "contour buffer size mismatch");
        ContourMap {
            pixels,
            height,
            width,
            low_threshold,
            high_threshold,
        }
    }

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

    /// Edge pixel coordinates as (row, col).
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut pts = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    pts.push((r, c));
                }
            }
        }
        pts
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Clamped-border separable convolution along rows then columns.
fn gaussian_blur(data: &[f32], height: usize, width: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut horizontal = vec![0.0f32; data.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let cc = (c as i64 + k as i64 - radius).clamp(0, width as i64 - 1) as usize;
                acc += w * data[r * width + cc];
            }
            horizontal[r * width + c] = acc;
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let rr = (r as i64 + k as i64 - radius).clamp(0, height as i64 - 1) as usize;
                acc += w * horizontal[rr * width + c];
            }
            out[r * width + c] = acc;
        }
    }
    out
}

pub fn canny(slice: &SliceImage, low: f32, high: f32, gaussian_sigma: f32) -> ContourMap {
    assert!(0.0 <= low && low < high, "thresholds must satisfy 0 <= low < high");
    let (h, w) = (slice.height(), slice.width());
    let scaled: Vec<f32> = slice.pixels().iter().map(|&p| p * 255.0).collect();
    let blurred = gaussian_blur(&scaled, h, w, gaussian_sigma);

    let at = |r: i64, c: i64| -> f32 {
        let r = r.clamp(0, h as i64 - 1) as usize;
        let c = c.clamp(0, w as i64 - 1) as usize;
        blurred[r * w + c]
    };

    let mut magnitude = vec![0.0f32; h * w];
    let mut direction = vec![0.0f32; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r, c - 1)
                - at(r + 1, c - 1);
            let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r - 1, c)
                - at(r - 1, c + 1);
            let idx = (r as usize) * w + c as usize;
            magnitude[idx] = (gx * gx + gy * gy).sqrt();
            direction[idx] = gy.atan2(gx);
        }
    }

    // Non-maximum suppression with quantized directions. Ties along the
    // gradient are broken toward the positive direction so a symmetric step
    // profile yields a single-pixel edge.
    let mag_at = |r: i64, c: i64| -> f32 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            magnitude[(r as usize) * w + c as usize]
        }
    };
    let mut thinned = vec![0.0f32; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let idx = (r as usize) * w + c as usize;
            let m = magnitude[idx];
            if m == 0.0 {
                continue;
            }
            let angle = direction[idx].to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            let (dr, dc) = if !(22.5..157.5).contains(&angle) {
                (0i64, 1i64)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let forward = mag_at(r + dr, c + dc);
            let backward = mag_at(r - dr, c - dc);
            if m > forward && m >= backward {
                thinned[idx] = m;
            }
        }
    }

    // Double-threshold hysteresis: seed from strong pixels, grow through
    // weak pixels with 8-connectivity.
    let mut edges = vec![false; h * w];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if thinned[r * w + c] >= high && !edges[r * w + c] {
                edges[r * w + c] = true;
                stack.push((r, c));
                while let Some((cr, cc)) = stack.pop() {
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let nr = cr as i64 + dr;
                            let nc = cc as i64 + dc;
                            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                                continue;
                            }
                            let nidx = (nr as usize) * w + nc as usize;
                            if !edges[nidx] && thinned[nidx] >= low {
                                edges[nidx] = true;
                                stack.push((nr as usize, nc as usize));
                            }
                        }
                    }
                }
            }
        }
    }

    ContourMap {
        pixels: edges,
        height: h,
        width: w,
        low_threshold: low,
        high_threshold: high,
    }
}
