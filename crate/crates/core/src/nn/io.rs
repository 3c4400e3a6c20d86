//! JSON model documents.
//!
//! `{"input_dim": int, "layers": [{"activation": str, "weights": [[f64]], "bias": [f64]}]}`

use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct NetworkDoc {
    input_dim: usize,
    layers: Vec<LayerDoc>,
}

impl From<&Network> for NetworkDoc {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| {
                let (_, cols) = l.weights.dims2();
                LayerDoc {
                    activation: l.activation,
                    weights: l.weights.data().chunks(cols).map(<[f64]>::to_vec).collect(),
                    bias: l.bias.data().to_vec(),
                }
            })
            .collect();
        NetworkDoc {
            input_dim: net.input_dim,
            layers,
        }
    }
}

impl NetworkDoc {
    /// Validates shapes; `prefix` is prepended to error paths (e.g. `encoder.`).
    pub(crate) fn into_network(self, prefix: &str) -> Result<Network> {
        let shape_err = |path: String, message: String| Error::LayerShape {
            path: format!("{prefix}{path}"),
            message,
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut width = self.input_dim;
        for (i, doc) in self.layers.into_iter().enumerate() {
            let out = doc.weights.len();
            if out == 0 {
                return Err(shape_err(format!("layers[{i}].weights"), "no rows".into()));
            }
            if let Some((r, row)) = doc.weights.iter().enumerate().find(|(_, r)| r.len() != width) {
                return Err(shape_err(
                    format!("layers[{i}].weights[{r}]"),
                    format!("expected {width} columns, found {}", row.len()),
                ));
            }
            if doc.bias.len() != out {
                return Err(shape_err(
                    format!("layers[{i}].bias"),
                    format!("expected {out} entries, found {}", doc.bias.len()),
                ));
            }
            let weights = Tensor::raw(vec![out, width], doc.weights.concat());
            let bias = Tensor::raw(vec![out], doc.bias);
            layers.push(DenseLayer::new(weights, bias, doc.activation)?);
            width = out;
        }
        Network::new(self.input_dim, layers).map_err(|e| match e {
            Error::LayerShape { path, message } => shape_err(path, message),
            other => other,
        })
    }
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Serialises `net`; floats use the shortest representation that round-trips.
pub fn save_model(net: &Network) -> Vec<u8> {
    serde_json::to_vec(&NetworkDoc::from(net)).expect("model documents always serialise")
}

pub fn load_model(bytes: &[u8]) -> Result<Network> {
    parse_json::<NetworkDoc>(bytes)?.into_network("")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::init(
            3,
            &[
                LayerSpec::new(4, Activation::Sigmoid),
                LayerSpec::new(2, Activation::Softmax),
            ],
            &mut rng,
        )
        .unwrap();
        let bytes = save_model(&net);
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(save_model(&back), bytes);
    }

    #[test]
    fn known_weight_loads_exactly() {
        let doc = br#"{"input_dim":2,"layers":[{"activation":"identity","weights":[[0.5,0.1]],"bias":[0.0]}]}"#;
        let net = load_model(doc).unwrap();
        assert_eq!(net.layers()[0].weights().data()[0], 0.5);
    }

    #[test]
    fn mismatched_widths_are_layer_shape_errors() {
        let doc = br#"{"input_dim":2,"layers":[
            {"activation":"relu","weights":[[1,2],[3,4]],"bias":[0,0]},
            {"activation":"softmax","weights":[[1,2,3]],"bias":[0]}]}"#;
        match load_model(doc) {
            Err(Error::LayerShape { path, .. }) => assert_eq!(path, "layers[1].weights[0]"),
            other => panic!("expected layer shape error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_document_names_field() {
        let doc = br#"{"input_dim":2,"layers":[{"activation":"tanh","weights":[[1,2]],"bias":[0]}]}"#;
        match load_model(doc) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "layers[0].activation"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
