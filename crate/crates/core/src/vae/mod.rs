//! Variational autoencoder with a Gaussian decoder, used as a density oracle.
//!
//! The encoder emits `(μ_z, log σ_z²)` and the decoder emits `(μ_x̂, s)` where
//! `σ_x̂ = 1e-3 + softplus(s)`, which keeps decoder densities finite. Scores
//! are log-densities throughout.

mod threshold;

pub use threshold::{
    calibrate_threshold, trivial_f_measure, Validator, Validity, ValidityThreshold,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, NodeId};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    parse_json, Activation, LayerSpec, Network, NetworkDoc, OptimizerState, TrainConfig,
    TrainReport,
};
use crate::tensor::Tensor;

/// Floor on the decoder's per-pixel standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeArchitecture {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VaeArchitecture {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            latent_dim: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconProbConfig {
    /// Latent samples `L` averaged per score.
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for ReconProbConfig {
    fn default() -> Self {
        Self {
            num_samples: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    encoder: Network,
    decoder: Network,
    latent_dim: usize,
}

/// Graph nodes of one traced VAE pass.
#[derive(Clone, Debug)]
pub struct VaeTrace {
    pub mu_z: NodeId,
    pub logvar_z: NodeId,
    pub z: NodeId,
    pub mu_x: NodeId,
    pub sigma_x: NodeId,
    /// `[rows, 1]` log N(x; μ_x̂, σ_x̂²) per row.
    pub log_density: NodeId,
    pub params: Vec<(NodeId, NodeId)>,
}

/// `KL(N(μ, σ²) ‖ N(0, I))` in closed form, with `σ² = exp(logvar)`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Serialize, Deserialize)]
struct VaeDoc {
    encoder: NetworkDoc,
    decoder: NetworkDoc,
    latent_dim: usize,
}

impl Vae {
    pub fn new(encoder: Network, decoder: Network, latent_dim: usize) -> Result<Self> {
        let shape_err = |path: &str, message: String| Error::LayerShape {
            path: path.into(),
            message,
        };
        if latent_dim == 0 {
            return Err(shape_err("latent_dim", "must be positive".into()));
        }
        if encoder.output_dim() != 2 * latent_dim {
            return Err(shape_err(
                "encoder",
                format!("output width {} != 2·latent_dim", encoder.output_dim()),
            ));
        }
        if decoder.input_dim() != latent_dim {
            return Err(shape_err(
                "decoder",
                format!("input width {} != latent_dim", decoder.input_dim()),
            ));
        }
        if decoder.output_dim() != 2 * encoder.input_dim() {
            return Err(shape_err(
                "decoder",
                format!("output width {} != 2·input_dim", decoder.output_dim()),
            ));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
        })
    }

    pub fn init<R: rand::Rng + ?Sized>(input_dim: usize, arch: &VaeArchitecture, rng: &mut R) -> Result<Self> {
        let relu = |w: usize| LayerSpec::new(w, Activation::Relu);
        let mut enc: Vec<LayerSpec> = arch.hidden.iter().copied().map(relu).collect();
        enc.push(LayerSpec::new(2 * arch.latent_dim, Activation::Identity));
        let mut dec: Vec<LayerSpec> = arch.hidden.iter().rev().copied().map(relu).collect();
        dec.push(LayerSpec::new(2 * input_dim, Activation::Identity));
        let encoder = Network::init(input_dim, &enc, rng)?;
        let decoder = Network::init(arch.latent_dim, &dec, rng)?;
        Self::new(encoder, decoder, arch.latent_dim)
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Records encoder, reparameterised sample and decoder on `g`.
    ///
    /// `eps` holds the standard-normal draws, `[rows, latent_dim]`.
    pub fn trace(&self, g: &mut Graph, x: NodeId, eps: Tensor, trainable: bool) -> Result<VaeTrace> {
        let l = self.latent_dim;
        let d = self.input_dim();
        let enc = self.encoder.trace(g, x, trainable)?;
        let mu_z = g.slice_cols(enc.output(), 0, l)?;
        let logvar_z = g.slice_cols(enc.output(), l, 2 * l)?;
        let half = g.scale(logvar_z, 0.5)?;
        let std = g.exp(half)?;
        let eps = g.constant(eps);
        let noise = g.mul(std, eps)?;
        let z = g.add(mu_z, noise)?;
        let dec = self.decoder.trace(g, z, trainable)?;
        let mu_x = g.slice_cols(dec.output(), 0, d)?;
        let raw = g.slice_cols(dec.output(), d, 2 * d)?;
        let soft = g.softplus(raw)?;
        let sigma_x = g.affine(soft, 1.0, SIGMA_FLOOR)?;
        let log_density = g.gaussian_log_density(x, mu_x, sigma_x)?;
        let mut params = enc.params;
        params.extend(dec.params);
        Ok(VaeTrace {
            mu_z,
            logvar_z,
            z,
            mu_x,
            sigma_x,
            log_density,
            params,
        })
    }

    /// Batch ELBO loss node: mean over rows of `KL − log N(x; μ_x̂, σ_x̂²)`.
    pub(crate) fn loss(&self, g: &mut Graph, trace: &VaeTrace, rows: usize) -> Result<NodeId> {
        let sq = g.square(trace.mu_z)?;
        let var = g.exp(trace.logvar_z)?;
        let t = g.add(sq, var)?;
        let t = g.sub(t, trace.logvar_z)?;
        let t = g.sum(t)?;
        let kl = g.affine(t, 0.5, -0.5 * (self.latent_dim * rows) as f64)?;
        let ll = g.sum(trace.log_density)?;
        let neg_elbo = g.sub(kl, ll)?;
        g.scale(neg_elbo, 1.0 / rows as f64)
    }

    fn rng_for(cfg: &ReconProbConfig, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        rng
    }

    /// Mean log-density of `x` over `L` latent draws.
    ///
    /// `stream` selects an independent random stream (e.g. the input index); the
    /// result is a pure function of `(self, x, cfg, stream)`.
    pub fn reconstruction_probability_stream(
        &self,
        x: &[f64],
        cfg: &ReconProbConfig,
        stream: u64,
    ) -> Result<f64> {
        if cfg.num_samples == 0 {
            return Err(Error::contract("reconstruction probability needs L >= 1"));
        }
        let l = self.latent_dim;
        let d = self.input_dim();
        let enc = self.encoder.forward(x)?;
        let (mu, logvar) = enc.split_at(l);
        let mut rng = Self::rng_for(cfg, stream);
        let samples = cfg.num_samples;
        let mut z = Vec::with_capacity(samples * l);
        for _ in 0..samples {
            for j in 0..l {
                let e: f64 = StandardNormal.sample(&mut rng);
                z.push(mu[j] + (0.5 * logvar[j]).exp() * e);
            }
        }
        let layers = self.decoder.forward_rows(&z, samples)?;
        let out = &layers.last().expect("non-empty").post;
        let mut total = 0.0;
        for row in out.chunks(2 * d) {
            let (mu_x, raw) = row.split_at(d);
            let mut ll = 0.0;
            for ((&xi, &m), &s) in x.iter().zip(mu_x).zip(raw) {
                let sigma = SIGMA_FLOOR + softplus(s);
                let r = (xi - m) / sigma;
                ll -= HALF_LN_2PI + sigma.ln() + 0.5 * r * r;
            }
            total += ll;
        }
        let score = total / samples as f64;
        if !score.is_finite() {
            return Err(Error::NonFinite("reconstruction probability".into()));
        }
        Ok(score)
    }

    pub fn reconstruction_probability(&self, x: &Tensor, cfg: &ReconProbConfig) -> Result<f64> {
        self.reconstruction_probability_stream(x.data(), cfg, 0)
    }

    /// Scores every input of `data`, input `i` on stream `i`.
    pub fn score_dataset(&self, data: &Dataset, cfg: &ReconProbConfig) -> Result<Vec<f64>> {
        data.inputs()
            .iter()
            .enumerate()
            .map(|(i, x)| self.reconstruction_probability_stream(x.data(), cfg, i as u64))
            .collect()
    }

    /// Deterministic reconstruction: decoder mean at `z = μ_z`.
    pub fn reconstruct_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let enc = self.encoder.forward(x)?;
        let mut out = self.decoder.forward(&enc[..self.latent_dim])?;
        out.truncate(self.input_dim());
        Ok(out)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn to_json(&self) -> Vec<u8> {
        let doc = VaeDoc {
            encoder: NetworkDoc::from(&self.encoder),
            decoder: NetworkDoc::from(&self.decoder),
            latent_dim: self.latent_dim,
        };
        serde_json::to_vec(&doc).expect("VAE documents always serialise")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: VaeDoc = parse_json(bytes)?;
        let encoder = doc.encoder.into_network("encoder.")?;
        let decoder = doc.decoder.into_network("decoder.")?;
        Self::new(encoder, decoder, doc.latent_dim)
    }
}

/// Trains a VAE on `train` by minimising the negative ELBO with one
/// reparameterised latent sample per input.
pub fn train_vae(train: &Dataset, arch: &VaeArchitecture, cfg: &TrainConfig) -> Result<(Vae, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = train.input_dim();
    let mut vae = Vae::init(d, arch, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let l = arch.latent_dim;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows = batch.len();
            let eps: Vec<f64> = (0..rows * l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = Graph::new();
            let x = g.constant(Tensor::raw(vec![rows, d], train.gather(batch)));
            let trace = vae.trace(&mut g, x, Tensor::raw(vec![rows, l], eps), true)?;
            let loss = vae.loss(&mut g, &trace, rows)?;
            let value = g.forward(loss)?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("ELBO loss became {value}"),
                });
            }
            total += value * rows as f64;
            let mut grads = g.gradients(loss)?;
            let flat: Vec<Tensor> = trace
                .params
                .iter()
                .flat_map(|&(w, b)| [grads.take(w), grads.take(b)])
                .collect();
            opt.step(&mut vae.params_mut(), &flat);
        }
        report.epoch_losses.push(total / train.len() as f64);
    }
    Ok((vae, report))
}

/// Mean log-density of each row using the same formula as the graph op.
#[cfg(test)]
fn direct_log_density(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&a, &m), &s)| -HALF_LN_2PI - s.ln() - 0.5 * ((a - m) / s).powi(2))
        .sum()
}
