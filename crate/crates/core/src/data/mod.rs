//! Labeled image datasets: IDX ingestion, subsetting and synthetic blobs.

mod idx;
mod synth;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use synth::{synth_blobs, SynthBlobs};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inputs in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = inputs.first() {
            let dim = first.len();
            for (i, x) in inputs.iter().enumerate() {
                if x.len() != dim {
                    return Err(Error::Shape {
                        op: "dataset input",
                        left: first.shape().to_vec(),
                        right: x.shape().to_vec(),
                    });
                }
                if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::contract(format!("input {i} has values outside [0, 1]")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Elements per input; zero for an empty dataset.
    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Tensor::len)
    }

    /// Shape of one input (e.g. `[28, 28]`).
    pub fn input_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(Tensor::shape)
    }

    /// `max(label) + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Concatenates the selected inputs into one row-major buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.input_dim());
        for &i in indices {
            out.extend_from_slice(self.inputs[i].data());
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` records (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Uniform sample of `n` records without replacement, reproducible from `seed`.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::contract(format!(
            "subset of {n} requested from {} records",
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    Ok(ds.select(&picked))
}
