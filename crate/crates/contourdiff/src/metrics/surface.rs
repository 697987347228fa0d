//! Surface extraction, ASSD and HD95.
//!
//! Nearest-neighbor queries go through a k-d tree; the O(n*m) double loop
//! lives in the test suite as the independent oracle.

use crate::dataio::BinaryMask;
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Boundary points of a mask, optionally scaled by physical spacing.
#[derive(Debug, Clone)]
pub struct SurfacePointSet {
    pub points: Vec<Point>,
    pub source: String,
}

/// Boundary pixels of a 2-D mask: foreground with at least one background
/// 4-neighbor (out-of-image counts as background).
pub fn surface_points_2d(mask: &BinaryMask, spacing: [f64; 2]) -> SurfacePointSet {
    let (h, w) = (mask.height(), mask.width());
    let at = |r: i64, c: i64| -> bool {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            false
        } else {
            mask.get(r as usize, c as usize)
        }
    };
    let mut points = Vec::new();
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            if at(r, c) && (!at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1)) {
                points.push([0.0, r as f64 * spacing[0], c as f64 * spacing[1]]);
            }
        }
    }
    SurfacePointSet {
        points,
        source: "mask2d".into(),
    }
}

/// Boundary voxels of a volumetric stack: foreground with at least one
/// background 6-neighbor.
pub fn surface_points_3d(masks: &[BinaryMask], spacing: [f64; 3]) -> SurfacePointSet {
    let depth = masks.len();
    let (h, w) = if depth > 0 {
        (masks[0].height(), masks[0].width())
    } else {
        (0, 0)
    };
    let at = |z: i64, r: i64, c: i64| -> bool {
        if z < 0 || r < 0 || c < 0 || z >= depth as i64 || r >= h as i64 || c >= w as i64 {
            false
        } else {
            masks[z as usize].get(r as usize, c as usize)
        }
    };
    let mut points = Vec::new();
    for z in 0..depth as i64 {
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                if at(z, r, c)
                    && (!at(z - 1, r, c)
                        || !at(z + 1, r, c)
                        || !at(z, r - 1, c)
                        || !at(z, r + 1, c)
                        || !at(z, r, c - 1)
                        || !at(z, r, c + 1))
                {
                    points.push([
                        z as f64 * spacing[0],
                        r as f64 * spacing[1],
                        c as f64 * spacing[2],
                    ]);
                }
            }
        }
    }
    SurfacePointSet {
        points,
        source: "mask3d".into(),
    }
}

/// Static 3-D k-d tree for exact nearest-neighbor distances.
struct KdTree {
    // In-place median layout: each subtree occupies a contiguous range with
    // its root (the median along axis = depth % 3) at the middle index.
    points: Vec<Point>,
}

impl KdTree {
    fn build(mut points: Vec<Point>) -> Self {
        fn construct(points: &mut [Point], depth: usize) {
            if points.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = points.len() / 2;
            points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let (left, rest) = points.split_at_mut(mid);
            construct(left, depth + 1);
            construct(&mut rest[1..], depth + 1);
        }
        construct(&mut points, 0);
        KdTree { points }
    }

    fn nearest(&self, query: &Point) -> f64 {
        fn sq_dist(a: &Point, b: &Point) -> f64 {
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        }
        fn search(points: &[Point], depth: usize, query: &Point, best: &mut f64) {
            if points.is_empty() {
                return;
            }
            let mid = points.len() / 2;
            let root = &points[mid];
            *best = best.min(sq_dist(root, query));
            if points.len() == 1 {
                return;
            }
            let axis = depth % 3;
            let (left, rest) = points.split_at(mid);
            let right = &rest[1..];
            let delta = query[axis] - root[axis];
            let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
            search(near, depth + 1, query, best);
            if delta * delta <= *best {
                search(far, depth + 1, query, best);
            }
        }
        let mut best = f64::INFINITY;
        search(&self.points, 0, query, &mut best);
        best.sqrt()
    }
}

/// Distances from every point of `from` to its nearest point in `to`.
pub(crate) fn nearest_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    let tree = KdTree::build(to.to_vec());
    from.iter().map(|p| tree.nearest(p)).collect()
}

fn require_nonempty(set: &SurfacePointSet, context: &str) -> Result<()> {
    if set.points.is_empty() {
        Err(Error::MetricUndefined(format!(
            "{context}: empty surface point set ({})",
            set.source
        )))
    } else {
        Ok(())
    }
}

/// Average symmetric surface distance between two surface point sets.
pub fn assd_points(sa: &SurfacePointSet, sb: &SurfacePointSet) -> Result<f64> {
    require_nonempty(sa, "assd")?;
    require_nonempty(sb, "assd")?;
    let d_ab = nearest_distances(&sa.points, &sb.points);
    let d_ba = nearest_distances(&sb.points, &sa.points);
    let total: f64 = d_ab.iter().chain(d_ba.iter()).sum();
    Ok(total / (d_ab.len() + d_ba.len()) as f64)
}

/// ASSD between two 2-D masks (spacing in mm per axis).
pub fn assd_2d(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 2]) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.height(), a.width()),
            actual: format!("{}x{}", b.height(), b.width()),
            context: "assd".into(),
        });
    }
    assd_points(&surface_points_2d(a, spacing), &surface_points_2d(b, spacing))
}

/// ASSD between two volumetric stacks.
pub fn assd_3d(a: &[BinaryMask], b: &[BinaryMask], spacing: [f64; 3]) -> Result<f64> {
    assd_points(&surface_points_3d(a, spacing), &surface_points_3d(b, spacing))
}

/// Linear-interpolation percentile of an unsorted sample.
fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// 95th-percentile Hausdorff distance between two point sets.
pub fn hd95(edge_a: &SurfacePointSet, edge_b: &SurfacePointSet) -> Result<f64> {
    require_nonempty(edge_a, "hd95")?;
    require_nonempty(edge_b, "hd95")?;
    let mut d_ab = nearest_distances(&edge_a.points, &edge_b.points);
    let mut d_ba = nearest_distances(&edge_b.points, &edge_a.points);
    Ok(percentile(&mut d_ab, 95.0).max(percentile(&mut d_ba, 95.0)))
}

/// Point set from 2-D pixel coordinates with unit spacing.
pub fn points_from_coords(coords: &[(usize, usize)]) -> SurfacePointSet {
    SurfacePointSet {
        points: coords
            .iter()
            .map(|&(r, c)| [0.0, r as f64, c as f64])
            .collect(),
        source: "coords".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::BinaryMask;
    use rand::Rng;

    fn brute_force_nearest(from: &[Point], to: &[Point]) -> Vec<f64> {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for r in 0..h {
            for c in 0..w {
                if rng.gen_bool(0.3) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    #[test]
    fn assd_identical_masks_is_zero() {
        let mut m = BinaryMask::empty(8, 8);
        for r in 2..6 {
            for c in 2..6 {
                m.set(r, c, true);
            }
        }
        assert_eq!(assd_2d(&m, &m, [1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn assd_two_single_pixels_five_apart() {
        let mut a = BinaryMask::empty(16, 16);
        a.set(3, 3, true);
        let mut b = BinaryMask::empty(16, 16);
        b.set(3, 8, true);
        assert_eq!(assd_2d(&a, &b, [1.0, 1.0]).unwrap(), 5.0);
    }

    #[test]
    fn assd_symmetric() {
        let mut rng = crate::rng::stream(1, "assd-sym");
        let a = random_mask(&mut rng, 12, 12);
        let b = random_mask(&mut rng, 12, 12);
        if a.count() > 0 && b.count() > 0 {
            let ab = assd_2d(&a, &b, [1.0, 1.0]).unwrap();
            let ba = assd_2d(&b, &a, [1.0, 1.0]).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn assd_empty_mask_is_reported_missing() {
        let a = BinaryMask::empty(8, 8);
        let mut b = BinaryMask::empty(8, 8);
        b.set(1, 1, true);
        assert!(matches!(
            assd_2d(&a, &b, [1.0, 1.0]),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn assd_respects_spacing() {
        let mut a = BinaryMask::empty(16, 16);
        a.set(3, 3, true);
        let mut b = BinaryMask::empty(16, 16);
        b.set(3, 8, true);
        // 5 px apart along the column axis at 2.0 mm/px -> 10 mm.
        assert_eq!(assd_2d(&a, &b, [1.0, 2.0]).unwrap(), 10.0);
    }

    #[test]
    fn hd95_identical_sets_is_zero() {
        let set = points_from_coords(&[(1, 1), (2, 5), (9, 3)]);
        assert_eq!(hd95(&set, &set).unwrap(), 0.0);
    }

    #[test]
    fn hd95_rigid_translation_by_three_four() {
        // Sparse grid, spacing 20 px, so the matching point is always the
        // translated copy at distance 5.
        let coords: Vec<(usize, usize)> = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i * 20, j * 20)))
            .collect();
        let shifted: Vec<(usize, usize)> = coords.iter().map(|&(r, c)| (r + 3, c + 4)).collect();
        let a = points_from_coords(&coords);
        let b = points_from_coords(&shifted);
        assert!((hd95(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hd95_monotone_in_translation() {
        let coords: Vec<(usize, usize)> = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i * 15, j * 15)))
            .collect();
        let a = points_from_coords(&coords);
        let mut prev = 0.0;
        for shift in [1usize, 2, 4, 7] {
            let shifted: Vec<(usize, usize)> =
                coords.iter().map(|&(r, c)| (r, c + shift)).collect();
            let b = points_from_coords(&shifted);
            let d = hd95(&a, &b).unwrap();
            assert!(d >= prev, "{d} < {prev} at shift {shift}");
            prev = d;
        }
    }

    #[test]
    fn hd95_not_greater_than_max_hausdorff() {
        let mut rng = crate::rng::stream(2, "hd95-max");
        for _ in 0..10 {
            let a: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.gen_range(0..32), rng.gen_range(0..32)))
                .collect();
            let b: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.gen_range(0..32), rng.gen_range(0..32)))
                .collect();
            let sa = points_from_coords(&a);
            let sb = points_from_coords(&b);
            let d_ab = nearest_distances(&sa.points, &sb.points);
            let d_ba = nearest_distances(&sb.points, &sa.points);
            let max_h = d_ab
                .iter()
                .chain(d_ba.iter())
                .fold(0.0f64, |acc, &d| acc.max(d));
            assert!(hd95(&sa, &sb).unwrap() <= max_h + 1e-12);
        }
    }

    #[test]
    fn kd_tree_matches_brute_force_on_random_sets() {
        let mut rng = crate::rng::stream(3, "kd");
        for trial in 0..50 {
            let n = rng.gen_range(1..60);
            let m = rng.gen_range(1..60);
            let gen_points = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<Point> {
                (0..k)
                    .map(|_| {
                        [
                            rng.gen_range(0.0..20.0),
                            rng.gen_range(0.0..20.0),
                            rng.gen_range(0.0..20.0),
                        ]
                    })
                    .collect()
            };
            let from = gen_points(&mut rng, n);
            let to = gen_points(&mut rng, m);
            let fast = nearest_distances(&from, &to);
            let slow = brute_force_nearest(&from, &to);
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() < 1e-9, "trial {trial}: {f} vs {s}");
            }
        }
    }

    #[test]
    fn hd95_twenty_point_sets_match_brute_force_oracle() {
        let mut rng = crate::rng::stream(4, "hd95-oracle");
        for _ in 0..20 {
            let a: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.gen_range(0..32), rng.gen_range(0..32)))
                .collect();
            let b: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.gen_range(0..32), rng.gen_range(0..32)))
                .collect();
            let sa = points_from_coords(&a);
            let sb = points_from_coords(&b);
            let mut d_ab = brute_force_nearest(&sa.points, &sb.points);
            let mut d_ba = brute_force_nearest(&sb.points, &sa.points);
            let oracle = percentile(&mut d_ab, 95.0).max(percentile(&mut d_ba, 95.0));
            assert!((hd95(&sa, &sb).unwrap() - oracle).abs() < 1e-9);
        }
    }
}
