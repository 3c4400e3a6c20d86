use std::path::{Path, PathBuf};

use distest::coverage::CoverageConfig;
use distest::nn::{LayerSpec, Optimizer, TrainConfig};
use distest::testgen::GenerationConfig;
use distest::vae::VaeArchitecture;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// One experiment, end to end. Every random choice derives from `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSpec,
    #[serde(default)]
    pub sizes: Sizes,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub vae: VaeSpec,
    #[serde(default)]
    pub coverage: CoverageConfig,
    /// `seed`, `nc_threshold` and `k` are taken from the master seed and `coverage`.
    #[serde(default)]
    pub generation: GenerationConfig,
    /// When set, `generate --mode vae` picks λ from this grid on the tuning seeds.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    /// In-distribution train/test IDX pairs plus an out-of-distribution test pair.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        invalid_images: PathBuf,
        invalid_labels: PathBuf,
    },
    /// Gaussian blobs; the invalid set is the shifted companion.
    Synth {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    /// Training subset; `None` keeps the whole training set.
    pub train: Option<usize>,
    /// Records per side of the calibration split.
    pub calibration: usize,
    pub seeds: usize,
    pub tuning_seeds: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            train: None,
            calibration: 2000,
            seeds: 50,
            tuning_seeds: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub train: TrainSettings,
}

/// Training hyperparameters; the seed comes from the master seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            optimizer: d.optimizer,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSpec {
    pub architecture: VaeArchitecture,
    pub train: TrainSettings,
    /// Latent samples per reconstruction score.
    pub num_samples: usize,
}

impl Default for VaeSpec {
    fn default() -> Self {
        Self {
            architecture: VaeArchitecture::default(),
            train: TrainSettings::default(),
            num_samples: 10,
        }
    }
}

/// Stage seed: first eight bytes of `SHA-256(master ‖ stage)`.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// Reads a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_slice(&bytes);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            CliError::Config(format!("config field `{}`: {}", e.path(), e.inner()))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            invalid_images,
            invalid_labels,
        } = &mut cfg.data
        {
            for p in [train_images, train_labels, test_images, test_labels, invalid_images, invalid_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("config field `{field}`: {msg}")));
        if self.models.len() < 2 {
            return bad("models", "differential testing needs at least two models");
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return bad(&format!("models[{i}].name"), "must be a plain non-empty file stem");
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return bad(&format!("models[{i}].name"), "duplicate model name");
            }
        }
        if let DataSpec::Synth { separation, .. } = self.data {
            if separation.is_nan() || separation <= 0.0 {
                return bad("data.separation", "must be positive");
            }
        }
        if self.vae.num_samples == 0 {
            return bad("vae.num_samples", "must be at least 1");
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() || grid.iter().any(|l| l.is_nan() || *l < 0.0) {
                return bad("lambda_grid", "needs at least one non-negative value");
            }
        }
        self.coverage
            .validate()
            .or_else(|e| bad("coverage", &e.to_string()))?;
        self.generation_config()
            .validate()
            .or_else(|e| bad("generation", &e.to_string()))
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            seed: derive_seed(self.seed, "generate"),
            nc_threshold: self.coverage.nc_threshold,
            k: self.coverage.k,
            ..self.generation.clone()
        }
    }
}
