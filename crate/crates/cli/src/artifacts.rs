//! On-disk layout of a run directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use distest::coverage::ActivationProfile;
use distest::nn::{load_model, save_model, Network};
use distest::vae::{ReconProbConfig, Validator, ValidityThreshold, Vae};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.json"))
    }

    pub fn train_metrics(&self) -> PathBuf {
        self.root.join("train_metrics.json")
    }

    pub fn vae(&self) -> PathBuf {
        self.root.join("vae.json")
    }

    pub fn vae_metrics(&self) -> PathBuf {
        self.root.join("vae_metrics.json")
    }

    pub fn profile(&self) -> PathBuf {
        self.root.join("profile.json")
    }

    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }

    pub fn calibration_report(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    pub fn suite(&self, mode: &str) -> PathBuf {
        self.root.join("suites").join(format!("{mode}.jsonl"))
    }

    pub fn summary(&self, mode: &str) -> PathBuf {
        self.root.join("suites").join(format!("{mode}.summary.json"))
    }

    pub fn lambda_sweep(&self) -> PathBuf {
        self.root.join("suites").join("lambda_sweep.json")
    }

    /// `<out>/suites/<stem>.<what>.json` for a suite file anywhere on disk.
    pub fn suite_sidecar(&self, suite: &Path, what: &str) -> PathBuf {
        let stem = suite.file_stem().map_or_else(|| "suite".into(), |s| s.to_string_lossy().into_owned());
        self.root.join("suites").join(format!("{stem}.{what}.json"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("distest.log")
    }

    /// Appends one timestamped line to the sidecar log, the only file that
    /// differs between identical reruns.
    pub fn log_line(&self, line: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let path = self.log();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "{ts} {line}").map_err(|e| CliError::io(&path, e))
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Reads an artifact produced by an earlier stage.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read_artifact(path)?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

pub fn save_network(path: &Path, net: &Network) -> Result<(), CliError> {
    write_bytes(path, &save_model(net))
}

pub fn load_network(path: &Path) -> Result<Network, CliError> {
    let bytes = read_artifact(path)?;
    load_model(&bytes).map_err(|e| CliError::Runtime(anyhow::Error::new(e).context(path.display().to_string())))
}

pub fn load_vae(path: &Path) -> Result<Vae, CliError> {
    let bytes = read_artifact(path)?;
    Vae::from_json(&bytes).map_err(|e| CliError::Runtime(anyhow::Error::new(e).context(path.display().to_string())))
}

pub fn load_validator(layout: &Layout, num_samples: usize, seed: u64) -> Result<Validator, CliError> {
    let vae = load_vae(&layout.vae())?;
    let threshold: ValidityThreshold = read_json(&layout.threshold())?;
    Ok(Validator::new(vae, threshold, ReconProbConfig { num_samples, seed }))
}

pub fn load_profile(layout: &Layout) -> Result<ActivationProfile, CliError> {
    read_json(&layout.profile())
}
