//! Feature embeddings and distribution distances (FID / KID).
//!
//! The default extractor is a seeded random projection of mean-pooled
//! pixels; a learned extractor can be plugged in through the trait. FID and
//! KID values from the default extractor are comparable across runs of this
//! library, not against published numbers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;

use crate::dataio::SliceImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, extractor_id: impl Into<String>) -> Self {
        let dim = vectors.first().map_or(0, Vec::len);
        assert!(vectors.iter().all(|v| v.len() == dim), "uniform dimension");
        FeatureSet {
            vectors,
            dim,
            extractor_id: extractor_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub trait FeatureExtractor {
    fn id(&self) -> String;
    fn embed(&self, image: &SliceImage) -> Vec<f64>;
}

/// Mean-pool to `pool x pool`, flatten, project with a fixed seeded Gaussian
/// matrix. Linear, deterministic given the seed.
pub struct RandomProjectionExtractor {
    pool: usize,
    dim: usize,
    seed: u64,
    projection: Vec<Vec<f64>>, // dim rows of pool*pool columns
}

impl RandomProjectionExtractor {
    pub fn new(seed: u64, dim: usize) -> Self {
        let pool = 16;
        let input_dim = pool * pool;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(
            seed,
            "feature-projection",
        ));
        let scale = 1.0 / (input_dim as f64).sqrt();
        let projection = (0..dim)
            .map(|_| {
                (0..input_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        RandomProjectionExtractor {
            pool,
            dim,
            seed,
            projection,
        }
    }
}

impl Default for RandomProjectionExtractor {
    fn default() -> Self {
        RandomProjectionExtractor::new(0, 64)
    }
}

impl FeatureExtractor for RandomProjectionExtractor {
    fn id(&self) -> String {
        format!("random-projection(seed={}, dim={})", self.seed, self.dim)
    }

    fn embed(&self, image: &SliceImage) -> Vec<f64> {
        // Mean-pool onto a pool x pool grid (image need not divide evenly).
        let (h, w) = (image.height(), image.width());
        let mut pooled = vec![0.0f64; self.pool * self.pool];
        let mut counts = vec![0u32; self.pool * self.pool];
        for r in 0..h {
            for c in 0..w {
                let pr = r * self.pool / h;
                let pc = c * self.pool / w;
                pooled[pr * self.pool + pc] += image.get(r, c) as f64;
                counts[pr * self.pool + pc] += 1;
            }
        }
        for (p, &n) in pooled.iter_mut().zip(&counts) {
            if n > 0 {
                *p /= n as f64;
            }
        }
        self.projection
            .iter()
            .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn feature_embed(images: &[SliceImage], extractor: &dyn FeatureExtractor) -> FeatureSet {
    FeatureSet::new(
        images.iter().map(|img| extractor.embed(img)).collect(),
        extractor.id(),
    )
}

fn mean_and_covariance(set: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let d = set.dim;
    let mut mean = DVector::zeros(d);
    for v in &set.vectors {
        for i in 0..d {
            mean[i] += v[i];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in &set.vectors {
        let centered = DVector::from_iterator(d, v.iter().copied()) - &mean;
        cov += &centered * centered.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    cov /= denom;
    // Regularize when the sample is too small for a stable covariance.
    if n < d + 1 {
        for i in 0..d {
            cov[(i, i)] += 1e-6;
        }
    }
    (mean, cov)
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clipped to zero.
fn sym_sqrt(m: &DMatrix<f64>, warn_context: &str) -> DMatrix<f64> {
    let symmetrized = (m + m.transpose()) * 0.5;
    let eig = symmetrized.symmetric_eigen();
    let mut clipped = false;
    let sqrt_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < 0.0 {
                if v < -1e-8 {
                    clipped = true;
                }
                0.0
            } else {
                v.sqrt()
            }
        })
        .collect();
    if clipped {
        eprintln!("warning: negative eigenvalues clipped in {warn_context}");
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(sqrt_vals));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits:
/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`.
pub fn fid(f1: &FeatureSet, f2: &FeatureSet) -> Result<f64> {
    if f1.len() < 2 || f2.len() < 2 {
        return Err(Error::MetricUndefined(
            "fid needs at least 2 vectors per set".into(),
        ));
    }
    if f1.dim != f2.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("dim {}", f1.dim),
            actual: format!("dim {}", f2.dim),
            context: "fid".into(),
        });
    }
    let (mu1, s1) = mean_and_covariance(f1);
    let (mu2, s2) = mean_and_covariance(f2);
    let diff = &mu1 - &mu2;
    // Tr((S1 S2)^{1/2}) computed as Tr((A S2 A)^{1/2}) with A = S1^{1/2},
    // which is symmetric PSD and numerically stable.
    let a = sym_sqrt(&s1, "fid: sqrt(S1)");
    let inner = &a * &s2 * &a;
    let sqrt_inner = sym_sqrt(&inner, "fid: sqrt(S1^1/2 S2 S1^1/2)");
    let value = diff.norm_squared() + s1.trace() + s2.trace() - 2.0 * sqrt_inner.trace();
    Ok(value.max(0.0))
}

fn poly_kernel(x: &[f64], y: &[f64], dim: usize) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / dim as f64 + 1.0).powi(3)
}

/// Unbiased MMD^2 estimate with the cubic polynomial kernel
/// `k(x, y) = (x.y / dim + 1)^3`; diagonal terms excluded, so the value may
/// be slightly negative.
pub fn kid(f1: &FeatureSet, f2: &FeatureSet) -> Result<f64> {
    let m = f1.len();
    let n = f2.len();
    if m < 2 || n < 2 {
        return Err(Error::MetricUndefined(
            "kid needs at least 2 vectors per set".into(),
        ));
    }
    if f1.dim != f2.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("dim {}", f1.dim),
            actual: format!("dim {}", f2.dim),
            context: "kid".into(),
        });
    }
    let dim = f1.dim;
    let mut k_xx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                k_xx += poly_kernel(&f1.vectors[i], &f1.vectors[j], dim);
            }
        }
    }
    let mut k_yy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                k_yy += poly_kernel(&f2.vectors[i], &f2.vectors[j], dim);
            }
        }
    }
    let mut k_xy = 0.0;
    for i in 0..m {
        for j in 0..n {
            k_xy += poly_kernel(&f1.vectors[i], &f2.vectors[j], dim);
        }
    }
    Ok(k_xx / (m * (m - 1)) as f64 + k_yy / (n * (n - 1)) as f64
        - 2.0 * k_xy / (m * n) as f64)
}
