use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, LayerSpec, Network, Optimizer, OptimizerState};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training of a softmax classifier on cross-entropy.
pub fn train_classifier(
    train: &Dataset,
    arch: &[LayerSpec],
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let classes = match arch.last() {
        Some(l) if l.activation == Activation::Softmax => l.width,
        _ => return Err(Error::contract("classifier must end in a softmax layer")),
    };
    if let Some(&bad) = train.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} exceeds {classes} output classes")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let input_dim = train.input_dim();
    let mut net = Network::init(input_dim, arch, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows = train.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();

            let mut g = Graph::new();
            let x = g.constant(Tensor::raw(vec![batch.len(), input_dim], rows));
            let trace = net.trace(&mut g, x, true)?;
            let loss = g.softmax_cross_entropy(trace.logits(), &labels)?;
            let value = g.forward(loss)?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {value}"),
                });
            }
            total += value * batch.len() as f64;

            let mut grads = g.gradients(loss)?;
            let flat: Vec<Tensor> = trace
                .params
                .iter()
                .flat_map(|&(w, b)| [grads.take(w), grads.take(b)])
                .collect();
            opt.step(&mut net.params_mut(), &flat);
        }
        report.epoch_losses.push(total / train.len() as f64);
    }
    Ok((net, report))
}

/// Fraction of `data` whose predicted label matches.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let labels = net.predict_labels(&data.gather(chunk), chunk.len())?;
        correct += labels
            .iter()
            .zip(chunk)
            .filter(|(&p, &i)| p == data.labels()[i])
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
