//! Brute-force coverage recomputation written straight from the criteria
//! definitions, with its own forward pass.

#![allow(dead_code)]

use distest::nn::{Activation, Network};

pub fn activations(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut h = x.to_vec();
    let last = net.layers().len() - 1;
    for (li, layer) in net.layers().iter().enumerate() {
        let (n_out, n_in) = (layer.output_width(), layer.input_width());
        let w = layer.weights().data();
        let b = layer.bias().data();
        let mut pre = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = b[j];
            for k in 0..n_in {
                acc += h[k] * w[j * n_in + k];
            }
            pre[j] = acc;
        }
        let post: Vec<f64> = match layer.activation() {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => pre.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
            Activation::Identity => pre.clone(),
            Activation::Softmax => {
                let m = pre.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = pre.iter().map(|&v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        };
        if li == last && layer.activation() == Activation::Softmax {
            out.extend_from_slice(&pre);
        } else {
            out.extend_from_slice(&post);
        }
        h = post;
    }
    out
}

#[derive(Debug, PartialEq)]
pub struct Covered {
    pub nc: Vec<bool>,
    /// `bins[neuron][bin]`
    pub bins: Vec<Vec<bool>>,
    pub low: Vec<bool>,
    pub high: Vec<bool>,
}

impl Covered {
    pub fn ratios(&self) -> (f64, f64, f64, f64) {
        let n = self.nc.len() as f64;
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64;
        let k = self.bins.first().map_or(0, Vec::len) as f64;
        let bins: f64 = self.bins.iter().map(|b| count(b)).sum();
        (
            count(&self.nc) / n,
            bins / (k * n),
            (count(&self.low) + count(&self.high)) / (2.0 * n),
            count(&self.high) / n,
        )
    }
}

pub fn brute_force(
    net: &Network,
    low: &[f64],
    high: &[f64],
    k: usize,
    t: f64,
    inputs: &[Vec<f64>],
) -> Covered {
    let widths: Vec<usize> = net.layers().iter().map(|l| l.output_width()).collect();
    let n: usize = widths.iter().sum();
    let mut c = Covered {
        nc: vec![false; n],
        bins: vec![vec![false; k]; n],
        low: vec![false; n],
        high: vec![false; n],
    };
    for x in inputs {
        let a = activations(net, x);
        let mut offset = 0;
        for &w in &widths {
            let layer = &a[offset..offset + w];
            let lo = layer.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = layer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                for (u, &v) in layer.iter().enumerate() {
                    if (v - lo) / (hi - lo) > t {
                        c.nc[offset + u] = true;
                    }
                }
            }
            offset += w;
        }
        for i in 0..n {
            let v = a[i];
            if v < low[i] {
                c.low[i] = true;
            } else if v > high[i] {
                c.high[i] = true;
            } else if high[i] == low[i] {
                c.bins[i][0] = true;
            } else {
                // linear scan: the first bin whose upper edge lies above v
                let width = (high[i] - low[i]) / k as f64;
                let mut bin = k - 1;
                for b in 0..k {
                    if v < low[i] + width * (b + 1) as f64 {
                        bin = b;
                        break;
                    }
                }
                c.bins[i][bin] = true;
            }
        }
    }
    c
}
