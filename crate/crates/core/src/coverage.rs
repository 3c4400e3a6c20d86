//! Neuron coverage criteria: NC, KMNC, NBC and SNAC.
//!
//! Coverage neurons are the post-activation outputs of every dense layer,
//! except a final softmax layer which contributes its pre-activation logits.
//! Neurons are numbered in `(layer, unit)` order.
//!
//! NC compares activations min-max scaled within each layer (per input)
//! against the threshold `t`; a layer that is constant for an input covers
//! nothing. KMNC splits each neuron's profiled `[low, high]` range into `k`
//! bins, closed at the top so `a == high` lands in bin `k-1`. NBC and SNAC
//! corners are strict: `a < low` or `a > high`. When `low == high` the single
//! point is bin 0 and any other value is a corner.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

/// Widths of the coverage layers of `net`.
pub fn coverage_layer_widths(net: &Network) -> Vec<usize> {
    net.layers().iter().map(|l| l.output_width()).collect()
}

/// Coverage-neuron activations for `rows` inputs, one flat `Vec` per input.
pub fn coverage_activations(net: &Network, inputs: &[f64], rows: usize) -> Result<Vec<Vec<f64>>> {
    let layers = net.forward_rows(inputs, rows)?;
    let last = layers.len() - 1;
    let neurons: usize = layers.iter().map(|l| l.width).sum();
    let mut out = vec![Vec::with_capacity(neurons); rows];
    for (li, layer) in layers.iter().enumerate() {
        let values = if li == last && net.layers()[li].activation() == Activation::Softmax {
            &layer.pre
        } else {
            &layer.post
        };
        for (r, chunk) in values.chunks(layer.width).enumerate() {
            out[r].extend_from_slice(chunk);
        }
    }
    Ok(out)
}

/// Per-neuron `[low, high]` activation bounds observed on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    layer_widths: Vec<usize>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActivationProfile {
    pub fn from_bounds(layer_widths: Vec<usize>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let n: usize = layer_widths.iter().sum();
        if low.len() != n || high.len() != n {
            return Err(Error::Shape {
                op: "activation profile",
                left: vec![n],
                right: vec![low.len(), high.len()],
            });
        }
        if let Some(i) = (0..n).find(|&i| low[i].partial_cmp(&high[i]).is_none_or(|o| o.is_gt())) {
            return Err(Error::contract(format!("profile low > high at neuron {i}")));
        }
        Ok(Self {
            layer_widths,
            low,
            high,
        })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn neurons(&self) -> usize {
        self.low.len()
    }
}

/// Exact elementwise min/max of coverage activations over `train`.
pub fn profile(net: &Network, train: &Dataset) -> Result<ActivationProfile> {
    if train.is_empty() {
        return Err(Error::contract("cannot profile an empty training set"));
    }
    let widths = coverage_layer_widths(net);
    let n: usize = widths.iter().sum();
    let mut low = vec![f64::INFINITY; n];
    let mut high = vec![f64::NEG_INFINITY; n];
    let idx: Vec<usize> = (0..train.len()).collect();
    for chunk in idx.chunks(256) {
        for acts in coverage_activations(net, &train.gather(chunk), chunk.len())? {
            for ((lo, hi), a) in low.iter_mut().zip(high.iter_mut()).zip(acts) {
                *lo = lo.min(a);
                *hi = hi.max(a);
            }
        }
    }
    ActivationProfile::from_bounds(widths, low, high)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    /// `t`
    pub nc_threshold: f64,
    /// KMNC bins per neuron.
    pub k: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            nc_threshold: 0.25,
            k: 100,
        }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.nc_threshold) {
            return Err(Error::contract("nc threshold must lie in [0, 1)"));
        }
        if self.k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        Ok(())
    }
}

/// The four coverage ratios plus the parameters they were computed with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nc: f64,
    pub kmnc: f64,
    pub nbc: f64,
    pub snac: f64,
    pub inputs: usize,
    pub neurons: usize,
    pub k: usize,
    pub t: f64,
}

/// Monotone per-criterion coverage bitsets.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageState {
    layer_widths: Vec<usize>,
    config: CoverageConfig,
    nc: FixedBitSet,
    kmnc: FixedBitSet,
    nbc_low: FixedBitSet,
    nbc_high: FixedBitSet,
    input_count: usize,
}

impl CoverageState {
    pub fn new(layer_widths: Vec<usize>, config: CoverageConfig) -> Result<Self> {
        config.validate()?;
        let n: usize = layer_widths.iter().sum();
        if n == 0 {
            return Err(Error::contract("coverage needs at least one neuron"));
        }
        Ok(Self {
            layer_widths,
            config,
            nc: FixedBitSet::with_capacity(n),
            kmnc: FixedBitSet::with_capacity(n * config.k),
            nbc_low: FixedBitSet::with_capacity(n),
            nbc_high: FixedBitSet::with_capacity(n),
            input_count: 0,
        })
    }

    pub fn for_network(net: &Network, config: CoverageConfig) -> Result<Self> {
        Self::new(coverage_layer_widths(net), config)
    }

    /// State whose NC bits come from a `'0'/'1'` vector in neuron order.
    pub fn from_nc_vector(layer_widths: Vec<usize>, config: CoverageConfig, bits: &str) -> Result<Self> {
        let mut state = Self::new(layer_widths, config)?;
        let n = state.neurons();
        if bits.chars().count() != n {
            return Err(Error::Shape {
                op: "coverage vector",
                left: vec![n],
                right: vec![bits.chars().count()],
            });
        }
        for (i, c) in bits.chars().enumerate() {
            match c {
                '1' => state.nc.insert(i),
                '0' => {}
                other => return Err(Error::contract(format!("bad coverage vector char {other:?}"))),
            }
        }
        Ok(state)
    }

    pub fn config(&self) -> CoverageConfig {
        self.config
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn neurons(&self) -> usize {
        self.nc.len()
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn neuron_id(&self, flat: usize) -> NeuronId {
        let mut rest = flat;
        for (layer, &w) in self.layer_widths.iter().enumerate() {
            if rest < w {
                return NeuronId { layer, unit: rest };
            }
            rest -= w;
        }
        panic!("neuron index {flat} out of range");
    }

    pub fn flat_index(&self, id: NeuronId) -> usize {
        self.layer_widths[..id.layer].iter().sum::<usize>() + id.unit
    }

    pub fn is_nc_covered(&self, flat: usize) -> bool {
        self.nc.contains(flat)
    }

    pub fn is_bin_covered(&self, flat: usize, bin: usize) -> bool {
        self.kmnc.contains(flat * self.config.k + bin)
    }

    pub fn is_low_corner_covered(&self, flat: usize) -> bool {
        self.nbc_low.contains(flat)
    }

    pub fn is_high_corner_covered(&self, flat: usize) -> bool {
        self.nbc_high.contains(flat)
    }

    pub fn uncovered_nc(&self) -> Vec<NeuronId> {
        self.nc.zeroes().map(|i| self.neuron_id(i)).collect()
    }

    /// Sets NC bits from one input's coverage activations (flat, neuron order).
    pub fn observe_nc(&mut self, activations: &[f64]) {
        let t = self.config.nc_threshold;
        let mut start = 0;
        for &w in &self.layer_widths {
            let layer = &activations[start..start + w];
            let lo = layer.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = layer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                for (u, &a) in layer.iter().enumerate() {
                    if (a - lo) / (hi - lo) > t {
                        self.nc.insert(start + u);
                    }
                }
            }
            start += w;
        }
    }

    /// Sets KMNC/NBC bits from one input's coverage activations.
    pub fn observe_multigranularity(&mut self, profile: &ActivationProfile, activations: &[f64]) {
        let k = self.config.k;
        for (i, &a) in activations.iter().enumerate() {
            let (lo, hi) = (profile.low[i], profile.high[i]);
            if a < lo {
                self.nbc_low.insert(i);
            } else if a > hi {
                self.nbc_high.insert(i);
            } else {
                let bin = if hi > lo {
                    ((k as f64 * (a - lo) / (hi - lo)).floor() as usize).min(k - 1)
                } else {
                    0
                };
                self.kmnc.insert(i * k + bin);
            }
        }
    }

    fn check_profile(&self, profile: &ActivationProfile) -> Result<()> {
        if profile.layer_widths != self.layer_widths {
            return Err(Error::contract("activation profile does not match this network"));
        }
        Ok(())
    }

    fn activations(&self, net: &Network, x: &[f64]) -> Result<Vec<f64>> {
        if coverage_layer_widths(net) != self.layer_widths {
            return Err(Error::contract("network does not match this coverage state"));
        }
        Ok(coverage_activations(net, x, 1)?.pop().expect("one row"))
    }

    /// NC-only update. Does not count the input; see [`CoverageState::update`].
    pub fn update_nc(&mut self, net: &Network, x: &[f64]) -> Result<()> {
        let acts = self.activations(net, x)?;
        self.observe_nc(&acts);
        Ok(())
    }

    /// KMNC/NBC/SNAC-only update. Does not count the input.
    pub fn update_multigranularity(
        &mut self,
        profile: &ActivationProfile,
        net: &Network,
        x: &[f64],
    ) -> Result<()> {
        self.check_profile(profile)?;
        let acts = self.activations(net, x)?;
        self.observe_multigranularity(profile, &acts);
        Ok(())
    }

    /// Records one input under every criterion (multi-granularity only with a profile).
    pub fn update(&mut self, net: &Network, profile: Option<&ActivationProfile>, x: &[f64]) -> Result<()> {
        if let Some(p) = profile {
            self.check_profile(p)?;
        }
        let acts = self.activations(net, x)?;
        self.observe_nc(&acts);
        if let Some(p) = profile {
            self.observe_multigranularity(p, &acts);
        }
        self.input_count += 1;
        Ok(())
    }

    fn check_compatible(&self, other: &CoverageState) -> Result<()> {
        if self.layer_widths != other.layer_widths || self.config != other.config {
            return Err(Error::contract("merging coverage states of different provenance"));
        }
        Ok(())
    }

    /// Bitwise union, summing input counts.
    pub fn merge(&self, other: &CoverageState) -> Result<CoverageState> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &CoverageState) -> Result<()> {
        self.check_compatible(other)?;
        self.nc.union_with(&other.nc);
        self.kmnc.union_with(&other.kmnc);
        self.nbc_low.union_with(&other.nbc_low);
        self.nbc_high.union_with(&other.nbc_high);
        self.input_count += other.input_count;
        Ok(())
    }

    /// True when every bitset equals `other`'s, ignoring input counts.
    pub fn same_bits(&self, other: &CoverageState) -> bool {
        self.nc == other.nc
            && self.kmnc == other.kmnc
            && self.nbc_low == other.nbc_low
            && self.nbc_high == other.nbc_high
    }

    pub fn ratios(&self) -> CoverageReport {
        let n = self.neurons() as f64;
        let k = self.config.k;
        CoverageReport {
            nc: self.nc.count_ones(..) as f64 / n,
            kmnc: self.kmnc.count_ones(..) as f64 / (k as f64 * n),
            nbc: (self.nbc_low.count_ones(..) + self.nbc_high.count_ones(..)) as f64 / (2.0 * n),
            snac: self.nbc_high.count_ones(..) as f64 / n,
            inputs: self.input_count,
            neurons: self.neurons(),
            k,
            t: self.config.nc_threshold,
        }
    }

    /// NC bits as a `'0'/'1'` string in neuron order.
    pub fn nc_vector(&self) -> String {
        (0..self.neurons())
            .map(|i| if self.nc.contains(i) { '1' } else { '0' })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn set_all(&mut self) {
        self.nc.insert_range(..);
        self.kmnc.insert_range(..);
        self.nbc_low.insert_range(..);
        self.nbc_high.insert_range(..);
    }
}
