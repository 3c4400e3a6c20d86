use serde::{Deserialize, Serialize};

use super::GenerationConfig;
use crate::coverage::{ActivationProfile, CoverageReport, CoverageState};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Baseline,
    #[serde(rename = "vae")]
    VaeGuided,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestRecord {
    pub input: Tensor,
    pub seed_index: usize,
    /// Ascent steps taken before acceptance; 0 for seeds that already disagree.
    pub iterations_used: usize,
    pub recon_score: f64,
    pub predictions: Vec<usize>,
    pub valid: bool,
}

/// One line of a suite file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteLine {
    pub seed: usize,
    pub iter: usize,
    pub recon: f64,
    pub labels: Vec<usize>,
    pub valid: bool,
    pub input: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seeds: usize,
    pub valid: usize,
    pub invalid: usize,
    pub coverage: CoverageReport,
}

/// Generated tests plus coverage of the valid ones on the target model.
#[derive(Clone, Debug)]
pub struct TestSuite {
    pub mode: GenerationMode,
    pub seeds: usize,
    pub records: Vec<TestRecord>,
    pub coverage: CoverageState,
    pub config: GenerationConfig,
}

impl From<&TestRecord> for SuiteLine {
    fn from(r: &TestRecord) -> Self {
        SuiteLine {
            seed: r.seed_index,
            iter: r.iterations_used,
            recon: r.recon_score,
            labels: r.predictions.clone(),
            valid: r.valid,
            input: r.input.data().to_vec(),
        }
    }
}

impl TestRecord {
    pub fn from_line(line: SuiteLine, shape: &[usize]) -> Result<Self> {
        let input = Tensor::new(shape.to_vec(), line.input)?;
        Ok(TestRecord {
            input,
            seed_index: line.seed,
            iterations_used: line.iter,
            recon_score: line.recon,
            predictions: line.labels,
            valid: line.valid,
        })
    }
}

impl TestSuite {
    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.valid).count()
    }

    pub fn invalid_count(&self) -> usize {
        self.records.len() - self.valid_count()
    }

    pub fn summary(&self) -> SuiteSummary {
        SuiteSummary {
            seeds: self.seeds,
            valid: self.valid_count(),
            invalid: self.invalid_count(),
            coverage: self.coverage.ratios(),
        }
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        records_to_jsonl(&self.records)
    }
}

pub fn records_to_jsonl(records: &[TestRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &SuiteLine::from(r)).expect("suite lines always serialise");
        out.push(b'\n');
    }
    out
}

/// Parses a suite file, giving every input `shape`.
pub fn records_from_jsonl(bytes: &[u8], shape: &[usize]) -> Result<Vec<TestRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: "suite".into(),
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut de = serde_json::Deserializer::from_str(l);
            let line: SuiteLine = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
                path: format!("line {}: {}", n + 1, e.path()),
                message: e.inner().to_string(),
            })?;
            TestRecord::from_line(line, shape)
        })
        .collect()
}

/// Coverage of `records` on `net`, counting only those selected by `keep`.
pub fn coverage_of(
    records: &[TestRecord],
    net: &Network,
    profile: Option<&ActivationProfile>,
    config: crate::coverage::CoverageConfig,
    keep: impl Fn(&TestRecord) -> bool,
) -> Result<CoverageState> {
    let mut state = CoverageState::for_network(net, config)?;
    for r in records.iter().filter(|r| keep(r)) {
        state.update(net, profile, r.input.data())?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_bits() {
        let r = TestRecord {
            input: Tensor::new(vec![1, 3], vec![0.1, 1.0 / 3.0, 0.0]).unwrap(),
            seed_index: 4,
            iterations_used: 7,
            recon_score: -123.456_789_012_345,
            predictions: vec![1, 2],
            valid: true,
        };
        let bytes = records_to_jsonl(std::slice::from_ref(&r));
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(r#"{"seed":4,"iter":7,"recon":"#));
        let back = records_from_jsonl(&bytes, &[1, 3]).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = records_from_jsonl(b"{\"seed\":\"x\"}\n", &[1]).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
