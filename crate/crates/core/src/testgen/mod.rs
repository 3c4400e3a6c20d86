//! Gradient-ascent test generation: a differential baseline and a variant whose
//! objective also rewards VAE log-density and whose acceptance is gated on it.

mod constraint;
mod suite;

pub use constraint::{Constraint, PlacedConstraint, Rect};
pub use suite::{
    coverage_of, records_from_jsonl, records_to_jsonl, GenerationMode, SuiteLine, SuiteSummary, TestRecord,
    TestSuite,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::coverage::{ActivationProfile, CoverageConfig, CoverageState, NeuronId};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Network};
use crate::tensor::Tensor;
use crate::vae::{Validator, Validity};

/// Density weights tried by [`sweep_lambda`] unless told otherwise.
pub const LAMBDA_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// How the ascent gradient is scaled before the constraint is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScaling {
    /// Raw `∂obj/∂x`.
    None,
    /// `∂obj/∂x` rescaled to unit RMS.
    Joint,
    /// Each term's gradient rescaled to unit RMS, then combined with `λ`, then
    /// rescaled again, so `λ` balances two directions of equal magnitude.
    #[default]
    PerTerm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    /// Weight of the log-density term; ignored by the baseline.
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub constraint: Constraint,
    pub nc_threshold: f64,
    /// KMNC bins for the suite's coverage state.
    pub k: usize,
    pub seed: u64,
    pub gradient_scaling: GradientScaling,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iterations: 30,
            lambda: 0.1,
            lambda1: 1.0,
            lambda2: 0.1,
            constraint: Constraint::None,
            nc_threshold: 0.25,
            k: 100,
            seed: 0,
            gradient_scaling: GradientScaling::PerTerm,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::contract("step size must be finite and non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::contract("max_iterations must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract("lambda must be finite and non-negative"));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::contract("obj1 weights must be finite"));
        }
        self.coverage().validate()
    }

    pub fn coverage(&self) -> CoverageConfig {
        CoverageConfig {
            nc_threshold: self.nc_threshold,
            k: self.k,
        }
    }
}

fn check_models(models: &[Network]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::contract("differential testing needs at least two models"));
    }
    let (d, c) = (models[0].input_dim(), models[0].output_dim());
    for (i, m) in models.iter().enumerate() {
        if m.input_dim() != d || m.output_dim() != c {
            return Err(Error::contract(format!("model {i} does not share input/output dims")));
        }
        if m.layers().last().map(|l| l.activation()) != Some(Activation::Softmax) {
            return Err(Error::contract(format!("model {i} lacks a softmax output")));
        }
    }
    Ok(())
}

/// Predicted label of each model on `x`.
pub fn model_labels(models: &[Network], x: &[f64]) -> Result<Vec<usize>> {
    models.iter().map(|m| Ok(m.predict_labels(x, 1)?[0])).collect()
}

/// True iff the models do not all agree on `x`.
pub fn counter_example(models: &[Network], x: &[f64]) -> Result<bool> {
    check_models(models)?;
    let labels = model_labels(models, x)?;
    Ok(labels.iter().any(|&l| l != labels[0]))
}

/// Most frequent label; ties go to the smallest label.
pub fn consensus_label(labels: &[usize]) -> usize {
    let top = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; top + 1];
    for &l in labels {
        counts[l] += 1;
    }
    // max_by_key keeps the last maximum, so scan in reverse.
    counts
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, &n)| n)
        .map_or(0, |(l, _)| l)
}

/// Graph node of a coverage neuron's raw activation in a traced network.
fn neuron_node(g: &mut Graph, net: &Network, trace: &crate::nn::Trace, neuron: NeuronId) -> Result<NodeId> {
    let last = net.layers().len() - 1;
    if neuron.layer > last || neuron.unit >= net.layers()[neuron.layer].output_width() {
        return Err(Error::contract(format!("no neuron {neuron:?} in target model")));
    }
    let node = if neuron.layer == last && net.layers()[last].activation() == Activation::Softmax {
        trace.pre[last]
    } else {
        trace.post[neuron.layer]
    };
    g.pick(node, neuron.unit)
}

/// `Σ_{i≠d} p_i[c] − λ1·p_d[c] + λ2·a_d(neuron)` on node `x` (`[1, input_dim]`).
pub fn obj1_differential(
    g: &mut Graph,
    models: &[Network],
    x: NodeId,
    target: usize,
    neuron: NeuronId,
    label: usize,
    cfg: &GenerationConfig,
) -> Result<NodeId> {
    check_models(models)?;
    if target >= models.len() {
        return Err(Error::contract("target model index out of range"));
    }
    if label >= models[0].output_dim() {
        return Err(Error::contract("label out of range"));
    }
    let mut others: Option<NodeId> = None;
    let mut obj = None;
    for (i, m) in models.iter().enumerate() {
        let tr = m.trace(g, x, false)?;
        let p = g.pick(tr.output(), label)?;
        if i == target {
            let own = g.scale(p, -cfg.lambda1)?;
            let act = neuron_node(g, m, &tr, neuron)?;
            let act = g.scale(act, cfg.lambda2)?;
            obj = Some(g.add(own, act)?);
        } else {
            others = Some(match others {
                Some(acc) => g.add(acc, p)?,
                None => p,
            });
        }
    }
    let obj = obj.expect("target traced");
    g.add(others.expect("at least one other model"), obj)
}

fn rms_normalize(grad: &mut [f64]) {
    let rms = (grad.iter().map(|v| v * v).sum::<f64>() / grad.len() as f64).sqrt();
    let scale = 1.0 / (rms + 1e-5);
    grad.iter_mut().for_each(|v| *v *= scale);
}

fn image_dims(seeds: &Dataset) -> (usize, usize) {
    match seeds.input_shape() {
        Some(&[rows, cols]) => (rows, cols),
        _ => (1, seeds.input_dim()),
    }
}

fn pick_neuron<R: Rng + ?Sized>(state: &CoverageState, rng: &mut R) -> NeuronId {
    let uncovered = state.uncovered_nc();
    if uncovered.is_empty() {
        state.neuron_id(rng.random_range(0..state.neurons()))
    } else {
        uncovered[rng.random_range(0..uncovered.len())]
    }
}

/// Runs the ascent loop for one seed.
#[allow(clippy::too_many_arguments)]
fn ascend_seed(
    index: usize,
    seed: &Tensor,
    models: &[Network],
    validator: &Validator,
    mode: GenerationMode,
    selection: &CoverageState,
    dims: (usize, usize),
    cfg: &GenerationConfig,
) -> Result<Option<TestRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let placed = cfg.constraint.place(dims.0, dims.1, &mut rng)?;
    let neuron = pick_neuron(selection, &mut rng);
    let vae = validator.vae();
    let stream = index as u64;
    let mut x = seed.data().to_vec();

    for iter in 0..=cfg.max_iterations {
        let labels = model_labels(models, &x)?;
        if labels.iter().any(|&l| l != labels[0]) {
            let (score, validity) = validator.assess(&x, stream)?;
            let valid = validity == Validity::Valid;
            if mode == GenerationMode::Baseline || valid {
                return Ok(Some(TestRecord {
                    input: Tensor::raw(seed.shape().to_vec(), x),
                    seed_index: index,
                    iterations_used: iter,
                    recon_score: score,
                    predictions: labels,
                    valid,
                }));
            }
        }
        if iter == cfg.max_iterations {
            break;
        }

        let c = consensus_label(&labels);
        let mut g = Graph::new();
        let xn = g.variable(Tensor::raw(vec![1, x.len()], x.clone()));
        let obj1 = obj1_differential(&mut g, models, xn, 0, neuron, c, cfg)?;
        let obj2 = if mode == GenerationMode::VaeGuided && cfg.lambda > 0.0 {
            let eps: Vec<f64> = (0..vae.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let tr = vae.trace(&mut g, xn, Tensor::raw(vec![1, vae.latent_dim()], eps), false)?;
            Some(g.sum(tr.log_density)?)
        } else {
            None
        };
        let mut grad = match (obj2, cfg.gradient_scaling) {
            (Some(obj2), GradientScaling::PerTerm) => {
                let mut g1 = g.backward(obj1, xn)?.into_data();
                let mut g2 = g.backward(obj2, xn)?.into_data();
                rms_normalize(&mut g1);
                rms_normalize(&mut g2);
                g1.iter().zip(&g2).map(|(a, b)| a + cfg.lambda * b).collect()
            }
            (Some(obj2), _) => {
                let weighted = g.scale(obj2, cfg.lambda)?;
                let obj = g.add(obj1, weighted)?;
                g.backward(obj, xn)?.into_data()
            }
            (None, _) => g.backward(obj1, xn)?.into_data(),
        };
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ascent gradient for seed {index}")));
        }
        if cfg.gradient_scaling != GradientScaling::None {
            rms_normalize(&mut grad);
        }
        placed.apply(&mut grad)?;
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi = (*xi + cfg.step_size * gi).clamp(0.0, 1.0);
        }
    }
    Ok(None)
}

fn generate(
    seeds: &Dataset,
    models: &[Network],
    validator: &Validator,
    profile: Option<&ActivationProfile>,
    cfg: &GenerationConfig,
    mode: GenerationMode,
) -> Result<TestSuite> {
    cfg.validate()?;
    check_models(models)?;
    if seeds.input_dim() != models[0].input_dim() && !seeds.is_empty() {
        return Err(Error::contract("seed inputs do not match the models"));
    }
    if validator.vae().input_dim() != models[0].input_dim() {
        return Err(Error::contract("VAE input width does not match the models"));
    }
    let target = &models[0];
    let dims = image_dims(seeds);
    let mut coverage = CoverageState::for_network(target, cfg.coverage())?;
    // Neuron selection tracks every accepted record, valid or not.
    let mut selection = coverage.clone();
    let mut records = Vec::new();

    for (i, seed) in seeds.inputs().iter().enumerate() {
        let Some(record) = ascend_seed(i, seed, models, validator, mode, &selection, dims, cfg)?
        else {
            continue;
        };
        selection.update(target, profile, record.input.data())?;
        if record.valid {
            coverage.update(target, profile, record.input.data())?;
        }
        records.push(record);
    }
    Ok(TestSuite {
        mode,
        seeds: seeds.len(),
        records,
        coverage,
        config: cfg.clone(),
    })
}

/// Differential ascent on `obj1` alone; each counter-example is kept and its
/// validity recorded after the fact.
pub fn generate_baseline(
    seeds: &Dataset,
    models: &[Network],
    validator: &Validator,
    profile: Option<&ActivationProfile>,
    cfg: &GenerationConfig,
) -> Result<TestSuite> {
    generate(seeds, models, validator, profile, cfg, GenerationMode::Baseline)
}

/// Ascent on `obj1 + λ·log p(x)`; a counter-example is kept only when its
/// reconstruction score clears the threshold.
pub fn generate_vae_guided(
    seeds: &Dataset,
    models: &[Network],
    validator: &Validator,
    profile: Option<&ActivationProfile>,
    cfg: &GenerationConfig,
) -> Result<TestSuite> {
    let suite = generate(seeds, models, validator, profile, cfg, GenerationMode::VaeGuided)?;
    debug_assert!(suite.records.iter().all(|r| r.valid && r.recon_score >= validator.alpha()));
    Ok(suite)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub best: f64,
    /// `(λ, valid tests)` per grid point, in grid order.
    pub valid_counts: Vec<(f64, usize)>,
}

/// Picks the density weight with the most valid tests on `seeds`; ties go to
/// the earlier grid entry.
pub fn sweep_lambda(
    seeds: &Dataset,
    models: &[Network],
    validator: &Validator,
    profile: Option<&ActivationProfile>,
    cfg: &GenerationConfig,
    grid: &[f64],
) -> Result<LambdaSweep> {
    if grid.is_empty() {
        return Err(Error::contract("empty lambda grid"));
    }
    let mut valid_counts = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let run = GenerationConfig {
            lambda,
            ..cfg.clone()
        };
        let suite = generate_vae_guided(seeds, models, validator, profile, &run)?;
        valid_counts.push((lambda, suite.valid_count()));
    }
    let mut best = valid_counts[0];
    for &entry in &valid_counts[1..] {
        if entry.1 > best.1 {
            best = entry;
        }
    }
    Ok(LambdaSweep {
        best: best.0,
        valid_counts,
    })
}
