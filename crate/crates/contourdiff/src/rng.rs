//! Deterministic RNG stream derivation.
//!
//! Every stochastic stage derives its stream from `(global_seed, label)` so
//! that results are independent of scheduling and work partitioning.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a global seed and a textual label.
pub fn derive_seed(global_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A ChaCha stream keyed by `(global_seed, label)`.
pub fn stream(global_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, label))
}

/// Deterministically re-initialize the randomly initialized weights of a
/// freshly built network. Tensor construction draws from a thread-local
/// rng, so two builds differ; this pass replaces every random tensor with
/// draws from a stream keyed by `(seed, label, tensor name)`, making the
/// init a pure function of the seed. Deliberate constant inits (all-zero
/// residual branches, all-one norm scales) are preserved, and rank-1
/// tensors (biases) are set to zero.
pub fn reseed_varmap(varmap: &candle_nn::VarMap, global_seed: u64, label: &str) -> crate::Result<()> {
    use rand::Rng;
    let data = varmap.data().lock().unwrap();
    for (name, var) in data.iter() {
        let tensor = var.as_tensor();
        let flat = tensor.flatten_all()?.to_vec1::<f32>()?;
        if flat.iter().all(|&v| v == 0.0) || flat.iter().all(|&v| v == 1.0) {
            continue;
        }
        let dims = tensor.dims();
        let replacement = if dims.len() == 1 {
            vec![0.0f32; flat.len()]
        } else {
            let fan_in: usize = dims[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt() as f32;
            let mut rng = stream(global_seed, &format!("{label}/{name}"));
            (0..flat.len())
                .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal) * std)
                .collect()
        };
        var.set(&candle_core::Tensor::from_vec(
            replacement,
            dims,
            tensor.device(),
        )?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "vol_000"), derive_seed(7, "vol_000"));
        assert_ne!(derive_seed(7, "vol_000"), derive_seed(7, "vol_001"));
        assert_ne!(derive_seed(7, "vol_000"), derive_seed(8, "vol_000"));
    }

    #[test]
    fn streams_reproduce() {
        let mut a = stream(42, "x");
        let mut b = stream(42, "x");
        for _ in 0..8 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
