use std::path::{Path, PathBuf};

use distest::coverage::{profile as activation_profile, CoverageReport, CoverageState};
use distest::nn::{accuracy, train_classifier, Network};
use distest::testgen::{
    generate_baseline, generate_vae_guided, records_from_jsonl, sweep_lambda, GenerationConfig, SuiteSummary,
    TestRecord,
};
use distest::vae::{calibrate_threshold, train_vae as fit_vae, trivial_f_measure, ReconProbConfig, Validity};
use distest::Dataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{
    load_network, load_profile, load_validator, load_vae, read_artifact, read_json, save_network, write_bytes,
    write_json, Layout,
};
use crate::config::{derive_seed, hex, ExperimentConfig};
use crate::report::{render_text, replay_vectors, split_coverage, suite_report, Report};
use crate::{pipeline, CliError, Mode};

pub struct Context {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Self {
        Self {
            cfg,
            layout: Layout::new(out),
        }
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.cfg.seed, stage)
    }

    fn recon(&self) -> ReconProbConfig {
        ReconProbConfig {
            num_samples: self.cfg.vae.num_samples,
            seed: self.seed("recon"),
        }
    }

    fn models(&self) -> Result<Vec<Network>, CliError> {
        self.cfg
            .models
            .iter()
            .map(|m| load_network(&self.layout.model(&m.name)))
            .collect()
    }

    fn target(&self) -> Result<Network, CliError> {
        load_network(&self.layout.model(&self.cfg.models[0].name))
    }
}

/// Extra text for the sidecar log line.
type LogExtra = String;

#[derive(Serialize, Deserialize)]
struct ModelMetrics {
    name: String,
    train_accuracy: f64,
    test_accuracy: f64,
    epoch_losses: Vec<f64>,
}

pub fn train(ctx: &Context) -> Result<LogExtra, CliError> {
    let splits = pipeline::load(&ctx.cfg)?;
    let mut metrics = Vec::new();
    for spec in &ctx.cfg.models {
        let tc = spec.train.with_seed(ctx.seed(&format!("train:{}", spec.name)));
        let (net, report) = train_classifier(&splits.train, &spec.layers, &tc)
            .map_err(|e| CliError::stage(&format!("train {}", spec.name), e))?;
        let train_accuracy = accuracy(&net, &splits.train).map_err(|e| CliError::stage("train", e))?;
        let test_accuracy = accuracy(&net, &splits.test).map_err(|e| CliError::stage("train", e))?;
        save_network(&ctx.layout.model(&spec.name), &net)?;
        metrics.push(ModelMetrics {
            name: spec.name.clone(),
            train_accuracy,
            test_accuracy,
            epoch_losses: report.epoch_losses,
        });
    }
    write_json(&ctx.layout.train_metrics(), &metrics)?;
    Ok(String::new())
}

#[derive(Serialize, Deserialize)]
struct VaeMetrics {
    train_set: String,
    epoch_losses: Vec<f64>,
}

pub fn train_vae(ctx: &Context) -> Result<LogExtra, CliError> {
    let splits = pipeline::load(&ctx.cfg)?;
    let tc = ctx.cfg.vae.train.with_seed(ctx.seed("train-vae"));
    let (vae, report) =
        fit_vae(&splits.train, &ctx.cfg.vae.architecture, &tc).map_err(|e| CliError::stage("train-vae", e))?;
    write_bytes(&ctx.layout.vae(), &vae.to_json())?;
    write_json(
        &ctx.layout.vae_metrics(),
        &VaeMetrics {
            train_set: splits.train.name().to_string(),
            epoch_losses: report.epoch_losses,
        },
    )?;
    Ok(String::new())
}

pub fn profile(ctx: &Context) -> Result<LogExtra, CliError> {
    let net = ctx.target()?;
    let splits = pipeline::load(&ctx.cfg)?;
    let p = activation_profile(&net, &splits.train).map_err(|e| CliError::stage("profile", e))?;
    write_json(&ctx.layout.profile(), &p)?;
    Ok(String::new())
}

/// Calibration diagnostics kept apart from the threshold file.
#[derive(Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_valid: usize,
    pub n_invalid: usize,
    pub f_measure: f64,
    /// F-measure of flagging everything invalid.
    pub trivial_f_measure: f64,
    pub separates: bool,
    pub valid_mean_score: f64,
    pub invalid_mean_score: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn calibrate(ctx: &Context) -> Result<LogExtra, CliError> {
    let vae = load_vae(&ctx.layout.vae())?;
    let splits = pipeline::load(&ctx.cfg)?;
    let rc = ctx.recon();
    let score = |ds: &Dataset| vae.score_dataset(ds, &rc).map_err(|e| CliError::stage("calibrate", e));
    let valid = score(&splits.calibration_valid)?;
    let invalid = score(&splits.calibration_invalid)?;
    let threshold = calibrate_threshold(&valid, &invalid)
        .map_err(|e| CliError::stage("calibrate", e))?
        .with_provenance(splits.calibration_valid.name(), splits.calibration_invalid.name());
    let report = CalibrationReport {
        n_valid: valid.len(),
        n_invalid: invalid.len(),
        f_measure: threshold.f_measure,
        trivial_f_measure: trivial_f_measure(valid.len(), invalid.len()),
        separates: threshold.separates(valid.len(), invalid.len()),
        valid_mean_score: mean(&valid),
        invalid_mean_score: mean(&invalid),
    };
    if !report.separates {
        eprintln!(
            "warning: scores do not separate the sets (F {:.3} <= trivial {:.3})",
            report.f_measure, report.trivial_f_measure
        );
    }
    write_json(&ctx.layout.threshold(), &threshold)?;
    write_json(&ctx.layout.calibration_report(), &report)?;
    Ok(format!(" alpha={} f={:.4}", threshold.alpha, threshold.f_measure))
}

/// SHA-256 over the bit patterns of every seed input, in order.
pub fn seed_digest(seeds: &Dataset) -> String {
    let mut h = Sha256::new();
    for x in seeds.inputs() {
        for v in x.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub fn generate(ctx: &Context, mode: Mode) -> Result<LogExtra, CliError> {
    let models = ctx.models()?;
    let validator = load_validator(&ctx.layout, ctx.cfg.vae.num_samples, ctx.seed("recon"))?;
    let profile = load_profile(&ctx.layout)?;
    let splits = pipeline::load(&ctx.cfg)?;
    let mut gc: GenerationConfig = ctx.cfg.generation_config();
    let stage = |e| CliError::stage("generate", e);

    let suite = match mode {
        Mode::Baseline => generate_baseline(&splits.seeds, &models, &validator, Some(&profile), &gc).map_err(stage)?,
        Mode::Vae => {
            if let Some(grid) = &ctx.cfg.lambda_grid {
                let sweep = sweep_lambda(&splits.tuning_seeds, &models, &validator, Some(&profile), &gc, grid)
                    .map_err(stage)?;
                write_json(&ctx.layout.lambda_sweep(), &sweep)?;
                gc.lambda = sweep.best;
            }
            let suite =
                generate_vae_guided(&splits.seeds, &models, &validator, Some(&profile), &gc).map_err(stage)?;
            if let Some(bad) = suite.records.iter().find(|r| !r.valid || r.recon_score < validator.alpha()) {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "VAE-guided suite holds an invalid record (seed {})",
                    bad.seed_index
                )));
            }
            suite
        }
    };
    write_bytes(&ctx.layout.suite(mode.name()), &suite.to_jsonl())?;
    write_json(&ctx.layout.summary(mode.name()), &suite.summary())?;
    Ok(format!(
        " mode={} lambda={} seeds_sha256={}",
        mode.name(),
        gc.lambda,
        seed_digest(&splits.seeds)
    ))
}

fn read_suite(path: &Path, input_dim: usize) -> Result<Vec<TestRecord>, CliError> {
    let bytes = read_artifact(path)?;
    records_from_jsonl(&bytes, &[input_dim])
        .map_err(|e| CliError::Runtime(anyhow::Error::new(e).context(path.display().to_string())))
}

#[derive(Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub valid: usize,
    pub invalid: usize,
    pub invalid_percent: Option<f64>,
    pub alpha: f64,
    /// Records whose stored verdict differs from the re-scored one.
    pub disagreements: Vec<usize>,
}

pub fn validate(ctx: &Context, suite: &Path) -> Result<LogExtra, CliError> {
    let validator = load_validator(&ctx.layout, ctx.cfg.vae.num_samples, ctx.seed("recon"))?;
    let records = read_suite(suite, validator.vae().input_dim())?;
    let mut valid = 0;
    let mut disagreements = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let (_, verdict) = validator
            .assess(r.input.data(), r.seed_index as u64)
            .map_err(|e| CliError::stage("validate", e))?;
        let ok = verdict == Validity::Valid;
        valid += usize::from(ok);
        if ok != r.valid {
            disagreements.push(i);
        }
    }
    let n = records.len();
    let report = ValidationReport {
        records: n,
        valid,
        invalid: n - valid,
        invalid_percent: (n > 0).then(|| 100.0 * (n - valid) as f64 / n as f64),
        alpha: validator.alpha(),
        disagreements,
    };
    write_json(&ctx.layout.suite_sidecar(suite, "validation"), &report)?;
    Ok(format!(" suite={}", suite.display()))
}

pub fn coverage(ctx: &Context, suite: &Path) -> Result<LogExtra, CliError> {
    let net = ctx.target()?;
    let profile = load_profile(&ctx.layout)?;
    let records = read_suite(suite, net.input_dim())?;
    let mut state = CoverageState::for_network(&net, ctx.cfg.coverage).map_err(|e| CliError::stage("coverage", e))?;
    for r in &records {
        state
            .update(&net, Some(&profile), r.input.data())
            .map_err(|e| CliError::stage("coverage", e))?;
    }
    let report: CoverageReport = state.ratios();
    write_json(&ctx.layout.suite_sidecar(suite, "coverage"), &report)?;
    Ok(format!(" suite={}", suite.display()))
}

pub fn report(ctx: &Context) -> Result<LogExtra, CliError> {
    let net = ctx.target()?;
    let profile = load_profile(&ctx.layout)?;
    let mut suites = Vec::new();
    for mode in [Mode::Baseline, Mode::Vae] {
        let path = ctx.layout.suite(mode.name());
        if !path.exists() {
            continue;
        }
        let records = read_suite(&path, net.input_dim())?;
        let summary_path = ctx.layout.summary(mode.name());
        let seeds = if summary_path.exists() {
            Some(read_json::<SuiteSummary>(&summary_path)?.seeds)
        } else {
            None
        };
        let split = split_coverage(&records, &net, Some(&profile), ctx.cfg.coverage)
            .map_err(|e| CliError::stage("report", e))?;
        suites.push(suite_report(mode.name(), seeds, &records, &split));
    }
    if suites.is_empty() {
        return Err(CliError::MissingArtifact(ctx.layout.suite(Mode::Baseline.name())));
    }
    let find = |n: &str| suites.iter().find(|s| s.name == n);
    let valid_ratio = match (find("baseline"), find("vae")) {
        (Some(b), Some(v)) if b.valid > 0 => Some(v.valid as f64 / b.valid as f64),
        _ => None,
    };
    let report = Report {
        suites,
        valid_ratio,
        vector_replay: replay_vectors().map_err(|e| CliError::stage("report", e))?,
    };
    write_json(&ctx.layout.report_json(), &report)?;
    let text = render_text(&report);
    write_bytes(&ctx.layout.report_text(), text.as_bytes())?;
    print!("{text}");
    Ok(String::new())
}
