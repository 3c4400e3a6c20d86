//! Valid / invalid / total coverage tables and their plain-text rendering.

use std::fmt::Write as _;

use distest::coverage::{ActivationProfile, CoverageConfig, CoverageReport, CoverageState};
use distest::nn::Network;
use distest::testgen::{coverage_of, TestRecord};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Columns<T> {
    /// `None` when the suite has no record of that kind.
    pub valid: Option<T>,
    pub invalid: Option<T>,
    pub total: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub seeds: Option<usize>,
    pub valid: usize,
    pub invalid: usize,
    /// Share of generated tests judged invalid, in percent.
    pub invalid_percent: Option<f64>,
    pub coverage: Columns<CoverageReport>,
    pub nc_vectors: Columns<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub label: String,
    pub valid: f64,
    pub invalid: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suites: Vec<SuiteReport>,
    /// VAE-guided valid tests over baseline valid tests, when both suites exist.
    pub valid_ratio: Option<f64>,
    pub vector_replay: Vec<ReplayRow>,
}

/// Coverage states of the valid part, the invalid part, and their union.
pub struct Split {
    pub valid: CoverageState,
    pub invalid: CoverageState,
    pub total: CoverageState,
}

pub fn split_coverage(
    records: &[TestRecord],
    net: &Network,
    profile: Option<&ActivationProfile>,
    cfg: CoverageConfig,
) -> distest::Result<Split> {
    let valid = coverage_of(records, net, profile, cfg, |r| r.valid)?;
    let invalid = coverage_of(records, net, profile, cfg, |r| !r.valid)?;
    let total = valid.merge(&invalid)?;
    Ok(Split { valid, invalid, total })
}

pub fn suite_report(name: &str, seeds: Option<usize>, records: &[TestRecord], split: &Split) -> SuiteReport {
    let valid = records.iter().filter(|r| r.valid).count();
    let invalid = records.len() - valid;
    let some_if = |n: usize, s: &CoverageState| (n > 0).then(|| s.ratios());
    let vec_if = |n: usize, s: &CoverageState| (n > 0).then(|| s.nc_vector());
    SuiteReport {
        name: name.to_string(),
        seeds,
        valid,
        invalid,
        invalid_percent: (!records.is_empty()).then(|| 100.0 * invalid as f64 / records.len() as f64),
        coverage: Columns {
            valid: some_if(valid, &split.valid),
            invalid: some_if(invalid, &split.invalid),
            total: split.total.ratios(),
        },
        nc_vectors: Columns {
            valid: vec_if(valid, &split.valid),
            invalid: vec_if(invalid, &split.invalid),
            total: split.total.nc_vector(),
        },
    }
}

#[derive(Deserialize)]
struct VectorFixture {
    neurons: usize,
    rows: Vec<VectorRow>,
}

#[derive(Deserialize)]
struct VectorRow {
    label: String,
    valid: String,
    invalid: String,
}

const VECTOR_FIXTURE: &str = include_str!("../fixtures/coverage_vectors.json");

/// NC ratios of the packaged example vectors, total computed by `merge`.
pub fn replay_vectors() -> distest::Result<Vec<ReplayRow>> {
    let fixture: VectorFixture = serde_json::from_str(VECTOR_FIXTURE).expect("packaged fixture parses");
    let cfg = CoverageConfig::default();
    fixture
        .rows
        .iter()
        .map(|row| {
            let v = CoverageState::from_nc_vector(vec![fixture.neurons], cfg, &row.valid)?;
            let i = CoverageState::from_nc_vector(vec![fixture.neurons], cfg, &row.invalid)?;
            let t = v.merge(&i)?;
            Ok(ReplayRow {
                label: row.label.clone(),
                valid: v.ratios().nc,
                invalid: i.ratios().nc,
                total: t.ratios().nc,
            })
        })
        .collect()
}

type Metric = (&'static str, fn(&CoverageReport) -> f64);

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>8} {:>9}", "suite", "seeds", "valid", "invalid", "invalid%");
    for s in &report.suites {
        let seeds = s.seeds.map_or_else(|| "-".into(), |n| n.to_string());
        let pct = s.invalid_percent.map_or_else(|| "-".into(), |p| format!("{p:.1}%"));
        let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>8} {:>9}", s.name, seeds, s.valid, s.invalid, pct);
    }
    if let Some(r) = report.valid_ratio {
        let _ = writeln!(out, "\nvalid tests, vae / baseline: {r:.2}");
    }
    for s in &report.suites {
        let _ = writeln!(out, "\ncoverage of {} suite", s.name);
        let _ = writeln!(out, "{:<6} {:>7} {:>7} {:>7}", "", "valid", "invalid", "total");
        let c = &s.coverage;
        let metrics: [Metric; 4] = [
            ("NC", |r| r.nc),
            ("KMNC", |r| r.kmnc),
            ("NBC", |r| r.nbc),
            ("SNAC", |r| r.snac),
        ];
        for (name, get) in metrics {
            let _ = writeln!(
                out,
                "{:<6} {:>7} {:>7} {:>7}",
                name,
                cell(c.valid.as_ref().map(get)),
                cell(c.invalid.as_ref().map(get)),
                cell(Some(get(&c.total)))
            );
        }
    }
    if !report.vector_replay.is_empty() {
        let _ = writeln!(out, "\nexample NC vectors");
        let _ = writeln!(out, "{:<8} {:>7} {:>7} {:>7}", "", "valid", "invalid", "total");
        for r in &report.vector_replay {
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>7} {:>7}",
                r.label,
                cell(Some(r.valid)),
                cell(Some(r.invalid)),
                cell(Some(r.total))
            );
        }
    }
    out
}
