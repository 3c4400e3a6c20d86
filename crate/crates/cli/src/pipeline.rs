//! Dataset loading and the fixed train / calibration / seed splits.

use std::path::Path;

use distest::data::{load_idx, subset, synth_blobs};
use distest::Dataset;

use crate::config::{derive_seed, DataSpec, ExperimentConfig};
use crate::CliError;

/// Every split a command may need, all derived from the master seed.
pub struct Splits {
    pub train: Dataset,
    /// Full in-distribution test set (classifier accuracy).
    pub test: Dataset,
    pub calibration_valid: Dataset,
    pub calibration_invalid: Dataset,
    pub seeds: Dataset,
    pub tuning_seeds: Dataset,
}

fn load_pair(images: &Path, labels: &Path, field: &str) -> Result<Dataset, CliError> {
    for (p, which) in [(images, "images"), (labels, "labels")] {
        if !p.exists() {
            return Err(CliError::Config(format!(
                "config field `data.{field}_{which}`: {} does not exist",
                p.display()
            )));
        }
    }
    let ds = load_idx(images, labels).map_err(|e| CliError::Runtime(e.into()))?;
    Ok(ds.with_name(images.display().to_string()))
}

fn take(ds: &Dataset, n: usize, what: &str) -> Result<(), CliError> {
    if n > ds.len() {
        return Err(CliError::Config(format!(
            "sizes: {what} needs {n} records but {} has {}",
            ds.name(),
            ds.len()
        )));
    }
    Ok(())
}

fn positions(ds: &Dataset, range: std::ops::Range<usize>, suffix: &str) -> Dataset {
    let idx: Vec<usize> = range.collect();
    let name = format!("{}#{suffix}", ds.name());
    ds.select(&idx).with_name(name)
}

pub fn load(cfg: &ExperimentConfig) -> Result<Splits, CliError> {
    let seed = |stage: &str| derive_seed(cfg.seed, stage);
    let (train, test, invalid) = match &cfg.data {
        DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            invalid_images,
            invalid_labels,
        } => (
            load_pair(train_images, train_labels, "train")?,
            load_pair(test_images, test_labels, "test")?,
            load_pair(invalid_images, invalid_labels, "invalid")?,
        ),
        DataSpec::Synth {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
        } => {
            let gen = |n, s| synth_blobs(*num_classes, *dim, n, *separation, s).map_err(|e| CliError::Config(e.to_string()));
            let train = gen(*train_per_class, seed("synth-train"))?;
            let test = gen(*test_per_class, seed("synth-test"))?;
            (train.valid.with_name("blobs-train"), test.valid.with_name("blobs-test"), test.invalid)
        }
    };

    let sizes = cfg.sizes;
    let train = match sizes.train {
        Some(n) => {
            take(&train, n, "sizes.train")?;
            let name = format!("{}#train{n}", train.name());
            subset(&train, n, seed("train-subset")).map_err(|e| CliError::Runtime(e.into()))?.with_name(name)
        }
        None => train,
    };

    // One shuffled draw from the test set, cut into disjoint blocks.
    let (c, s, t) = (sizes.calibration, sizes.seeds, sizes.tuning_seeds);
    take(&test, c + s + t, "calibration + seeds + tuning_seeds")?;
    let drawn = subset(&test, c + s + t, seed("test-split"))
        .map_err(|e| CliError::Runtime(e.into()))?
        .with_name(test.name().to_string());
    take(&invalid, c, "sizes.calibration")?;
    let invalid_name = format!("{}#calibration{c}", invalid.name());
    let calibration_invalid = subset(&invalid, c, seed("invalid-split"))
        .map_err(|e| CliError::Runtime(e.into()))?
        .with_name(invalid_name);

    Ok(Splits {
        calibration_valid: positions(&drawn, 0..c, &format!("calibration{c}")),
        seeds: positions(&drawn, c..c + s, &format!("seeds{s}")),
        tuning_seeds: positions(&drawn, c + s..c + s + t, &format!("tuning{t}")),
        calibration_invalid,
        train,
        test,
    })
}
