//! Dense feed-forward networks shared by the classifiers and the VAE.

mod io;
mod optim;
mod train;

pub use io::{load_model, save_model};
pub(crate) use io::{parse_json, NetworkDoc};
pub(crate) use optim::OptimizerState;
pub use optim::Optimizer;
pub use train::{accuracy, train_classifier, TrainConfig, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, row_softmax, sigmoid, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    fn apply_rows(self, pre: &[f64], cols: usize) -> Vec<f64> {
        match self {
            Activation::Relu => pre.iter().map(|v| v.max(0.0)).collect(),
            Activation::Sigmoid => pre.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Identity => pre.to_vec(),
            Activation::Softmax => row_softmax(pre, cols),
        }
    }
}

/// Width and activation of one layer in an architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub(crate) weights: Tensor,
    /// `[out]`
    pub(crate) bias: Tensor,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weights.dims2();
        if weights.shape().len() != 2 || bias.len() != out {
            return Err(Error::Shape {
                op: "dense layer",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weights,
            bias: bias.reshape(vec![out])?,
            activation,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.weights.dims2().1
    }

    pub fn output_width(&self) -> usize {
        self.weights.dims2().0
    }
}

/// Per-layer values from a direct (tape-free) forward pass over `rows` inputs.
#[derive(Clone, Debug)]
pub struct LayerValues {
    /// Pre-activation, `[rows, width]` flattened.
    pub pre: Vec<f64>,
    /// Post-activation, same layout.
    pub post: Vec<f64>,
    pub width: usize,
}

/// Graph nodes produced by [`Network::trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// `(weights, bias)` leaves per layer.
    pub params: Vec<(NodeId, NodeId)>,
    pub pre: Vec<NodeId>,
    pub post: Vec<NodeId>,
}

impl Trace {
    pub fn output(&self) -> NodeId {
        *self.post.last().expect("network has at least one layer")
    }

    pub fn logits(&self) -> NodeId {
        *self.pre.last().expect("network has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Tensor,
}

/// Ordered stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::LayerShape {
                path: "input_dim".into(),
                message: "must be positive".into(),
            });
        }
        if layers.is_empty() {
            return Err(Error::LayerShape {
                path: "layers".into(),
                message: "network needs at least one layer".into(),
            });
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_width() != width {
                return Err(Error::LayerShape {
                    path: format!("layers[{i}].weights"),
                    message: format!(
                        "expected {width} input columns, found {}",
                        layer.input_width()
                    ),
                });
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::LayerShape {
                    path: format!("layers[{i}].activation"),
                    message: "softmax is only allowed on the final layer".into(),
                });
            }
            if !layer.weights.all_finite() || !layer.bias.all_finite() {
                return Err(Error::NonFinite(format!("layers[{i}] parameters")));
            }
            width = layer.output_width();
        }
        Ok(Self { input_dim, layers })
    }

    /// Fan-based uniform initialisation `U(-√(6/(in+out)), √(6/(in+out)))`, zero bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, arch: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(arch.len());
        let mut fan_in = input_dim;
        for spec in arch {
            if spec.width == 0 {
                return Err(Error::contract("layer width must be positive"));
            }
            let limit = (6.0 / (fan_in + spec.width) as f64).sqrt();
            let weights = (0..spec.width * fan_in)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            layers.push(DenseLayer {
                weights: Tensor::raw(vec![spec.width, fan_in], weights),
                bias: Tensor::zeros(&[spec.width]),
                activation: spec.activation,
            });
            fan_in = spec.width;
        }
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_width)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.output_width(), l.activation))
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    fn check_input(&self, len: usize, rows: usize) -> Result<()> {
        if len != self.input_dim * rows {
            return Err(Error::Shape {
                op: "network input",
                left: vec![rows, self.input_dim],
                right: vec![len],
            });
        }
        Ok(())
    }

    /// Forward pass over `rows` row-major inputs without building a tape.
    pub fn forward_rows(&self, inputs: &[f64], rows: usize) -> Result<Vec<LayerValues>> {
        self.check_input(inputs.len(), rows)?;
        let mut out: Vec<LayerValues> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (width, fan_in) = layer.weights.dims2();
            let x = out.last().map_or(inputs, |l| l.post.as_slice());
            let mut pre = Vec::with_capacity(rows * width);
            for _ in 0..rows {
                pre.extend_from_slice(layer.bias.data());
            }
            gemm(rows, fan_in, width, x, false, layer.weights.data(), true, &mut pre, true);
            let post = layer.activation.apply_rows(&pre, width);
            out.push(LayerValues { pre, post, width });
        }
        Ok(out)
    }

    /// Final-layer outputs for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut layers = self.forward_rows(x, 1)?;
        Ok(layers.pop().expect("non-empty").post)
    }

    /// Records this network on `g`, fed by node `x` (`[rows, input_dim]`).
    ///
    /// With `trainable` the parameters become variables, otherwise constants.
    pub fn trace(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<Trace> {
        let mut trace = Trace {
            params: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x;
        for layer in &self.layers {
            let (w, b) = if trainable {
                (g.variable(layer.weights.clone()), g.variable(layer.bias.clone()))
            } else {
                (g.constant(layer.weights.clone()), g.constant(layer.bias.clone()))
            };
            let pre = g.linear(h, w, b)?;
            let post = match layer.activation {
                Activation::Relu => g.relu(pre)?,
                Activation::Sigmoid => g.sigmoid(pre)?,
                Activation::Identity => pre,
                Activation::Softmax => g.softmax(pre)?,
            };
            trace.params.push((w, b));
            trace.pre.push(pre);
            trace.post.push(post);
            h = post;
        }
        Ok(trace)
    }

    /// Class probabilities (softmax of the final pre-activation) and argmax label.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        if self.layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(Error::contract("predict requires a softmax output layer"));
        }
        let probs = self.forward(x.data())?;
        Ok(Prediction {
            label: argmax(&probs),
            probabilities: Tensor::raw(vec![probs.len()], probs),
        })
    }

    /// Labels for a batch of inputs, one row per input.
    pub fn predict_labels(&self, inputs: &[f64], rows: usize) -> Result<Vec<usize>> {
        let layers = self.forward_rows(inputs, rows)?;
        let last = layers.last().expect("non-empty");
        Ok(last.post.chunks(last.width).map(argmax).collect())
    }
}
