use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Valid blobs plus a shifted companion used as the invalid distribution.
#[derive(Clone, Debug)]
pub struct SynthBlobs {
    pub valid: Dataset,
    pub invalid: Dataset,
}

const VALID_LOW: f64 = 0.05;
const VALID_SPAN: f64 = 0.2;
const SHIFT: f64 = 0.7;

/// Gaussian class blobs clipped to `[0, 1]^dim`.
///
/// Valid class centres sit in `[0.05, 0.25]^dim`, adjacent classes one spacing
/// apart in every coordinate, with noise `σ = spacing / separation`. The invalid
/// companion shifts every centre by `+0.7` per coordinate, at least
/// `3.5·separation·σ` away.
pub fn synth_blobs(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<SynthBlobs> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::contract("separation must be positive"));
    }
    if num_classes == 0 || dim == 0 {
        return Err(Error::contract("need at least one class and one dimension"));
    }
    let spacing = VALID_SPAN / (num_classes.saturating_sub(1).max(1)) as f64;
    let noise = Normal::new(0.0, spacing / separation).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centre = |class: usize, j: usize| VALID_LOW + spacing * ((class + j) % num_classes) as f64;
    let mut make = |shift: f64, name: &str| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(num_classes * n_per_class);
        let mut labels = Vec::with_capacity(num_classes * n_per_class);
        for i in 0..n_per_class * num_classes {
            let class = i % num_classes;
            let x = (0..dim)
                .map(|j| (centre(class, j) + shift + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            inputs.push(Tensor::raw(vec![dim], x));
            labels.push(class);
        }
        Dataset::new(name, inputs, labels)
    };
    let valid = make(0.0, "blobs")?;
    let invalid = make(SHIFT, "blobs-shifted")?;
    Ok(SynthBlobs { valid, invalid })
}
