//! Distribution-aware test generation for neural networks.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff core,
//! dense classifiers, neuron coverage criteria (NC, KMNC, NBC, SNAC), a
//! Gaussian-decoder VAE used as an input validity oracle with an F-measure
//! calibrated threshold, and two gradient-ascent test generators: a
//! differential baseline and one guided by the VAE density.

pub mod autodiff;
pub mod coverage;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod tensor;
pub mod testgen;
pub mod vae;

pub use autodiff::{Gradients, Graph, NodeId};
pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::{Activation, LayerSpec, Network, TrainConfig};
pub use tensor::Tensor;
pub use vae::{calibrate_threshold, ReconProbConfig, Vae, Validator, Validity, ValidityThreshold};
