use serde::{Deserialize, Serialize};

use super::{ReconProbConfig, Vae};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Invalid,
}

/// Calibrated cut-off on reconstruction log-density. Inputs scoring below
/// `alpha` are invalid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityThreshold {
    pub alpha: f64,
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub valid_set: String,
    pub invalid_set: String,
}

impl ValidityThreshold {
    pub fn classify_score(&self, score: f64) -> Validity {
        if score >= self.alpha {
            Validity::Valid
        } else {
            Validity::Invalid
        }
    }

    pub fn with_provenance(mut self, valid_set: impl Into<String>, invalid_set: impl Into<String>) -> Self {
        self.valid_set = valid_set.into();
        self.invalid_set = invalid_set.into();
        self
    }

    /// True when the calibrated F beats always answering "invalid".
    pub fn separates(&self, n_valid: usize, n_invalid: usize) -> bool {
        self.f_measure > trivial_f_measure(n_valid, n_invalid)
    }
}

/// F-measure of the classifier that labels everything invalid.
pub fn trivial_f_measure(n_valid: usize, n_invalid: usize) -> f64 {
    let ni = n_invalid as f64;
    if n_invalid == 0 {
        return 0.0;
    }
    2.0 * ni / (2.0 * ni + n_valid as f64)
}

/// Picks the `alpha` maximising the F-measure with "invalid" as the positive
/// class, over every distinct observed score. Ties go to the smaller `alpha`.
pub fn calibrate_threshold(valid: &[f64], invalid: &[f64]) -> Result<ValidityThreshold> {
    if valid.is_empty() || invalid.is_empty() {
        return Err(Error::DegenerateCalibration(
            "both valid and invalid scores are required".into(),
        ));
    }
    if valid.iter().chain(invalid).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration score".into()));
    }
    let mut v = valid.to_vec();
    let mut iv = invalid.to_vec();
    v.sort_by(f64::total_cmp);
    iv.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = v.iter().chain(&iv).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.len() == 1 {
        return Err(Error::DegenerateCalibration(format!(
            "all {} scores equal {}",
            v.len() + iv.len(),
            candidates[0]
        )));
    }

    // F = 2TP / (2TP + FP + FN) compared exactly on integer counts.
    let n_invalid = iv.len() as u128;
    let (mut vi, mut ii) = (0usize, 0usize);
    let mut best: Option<(f64, u128, u128, u128)> = None;
    for &alpha in &candidates {
        while vi < v.len() && v[vi] < alpha {
            vi += 1;
        }
        while ii < iv.len() && iv[ii] < alpha {
            ii += 1;
        }
        let (tp, fp) = (ii as u128, vi as u128);
        let num = 2 * tp;
        let den = 2 * tp + fp + (n_invalid - tp);
        let better = match best {
            None => true,
            Some((_, bn, bd, _)) => num * bd > bn * den,
        };
        if better {
            best = Some((alpha, num, den, fp));
        }
    }
    let (alpha, num, _, fp) = best.expect("at least two candidates");
    let tp = (num / 2) as f64;
    let precision = if tp + fp as f64 > 0.0 { tp / (tp + fp as f64) } else { 0.0 };
    let recall = tp / n_invalid as f64;
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ValidityThreshold {
        alpha,
        f_measure,
        precision,
        recall,
        valid_set: String::new(),
        invalid_set: String::new(),
    })
}

/// A trained VAE paired with its threshold.
#[derive(Clone, Debug)]
pub struct Validator {
    vae: Vae,
    threshold: ValidityThreshold,
    recon: ReconProbConfig,
}

impl Validator {
    pub fn new(vae: Vae, threshold: ValidityThreshold, recon: ReconProbConfig) -> Self {
        Self {
            vae,
            threshold,
            recon,
        }
    }

    pub fn vae(&self) -> &Vae {
        &self.vae
    }

    pub fn threshold(&self) -> &ValidityThreshold {
        &self.threshold
    }

    pub fn recon_config(&self) -> &ReconProbConfig {
        &self.recon
    }

    pub fn alpha(&self) -> f64 {
        self.threshold.alpha
    }

    /// Score and verdict for `x`, sampling on `stream`.
    pub fn assess(&self, x: &[f64], stream: u64) -> Result<(f64, Validity)> {
        let score = self.vae.reconstruction_probability_stream(x, &self.recon, stream)?;
        Ok((score, self.threshold.classify_score(score)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let t = calibrate_threshold(&[-1.0, -2.0, -3.0], &[-10.0, -11.0]).unwrap();
        assert_eq!(t.alpha, -3.0);
        assert_eq!((t.precision, t.recall, t.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ties_take_smaller_alpha() {
        // alpha = 2 gives TP 1, FP 0, FN 1; alpha = 5 gives TP 2, FP 2, FN 0. Both F = 2/3.
        let t = calibrate_threshold(&[2.0, 3.0, 5.0], &[1.0, 4.0]).unwrap();
        assert_eq!(t.alpha, 2.0);
        assert!((t.f_measure - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((t.precision, t.recall), (1.0, 0.5));
    }

    #[test]
    fn all_equal_scores_are_degenerate() {
        assert!(matches!(
            calibrate_threshold(&[1.0, 1.0], &[1.0]),
            Err(Error::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn non_separating_scores_are_flagged() {
        // invalid scores above valid ones: nothing beats flagging everything
        let v = [0.0, 0.1];
        let i = [5.0, 6.0];
        let t = calibrate_threshold(&v, &i).unwrap();
        assert!(!t.separates(v.len(), i.len()));
        let t = calibrate_threshold(&i, &v).unwrap();
        assert!(t.separates(2, 2));
    }

    #[test]
    fn classify_boundary_is_valid() {
        let t = calibrate_threshold(&[0.0, 1.0], &[-1.0]).unwrap();
        assert_eq!(t.classify_score(t.alpha), Validity::Valid);
        assert_eq!(t.classify_score(t.alpha - 1e-9), Validity::Invalid);
    }

    #[test]
    fn serialises_in_schema_order() {
        let t = ValidityThreshold {
            alpha: -1.5,
            f_measure: 0.5,
            precision: 0.25,
            recall: 1.0,
            valid_set: "a".into(),
            invalid_set: "b".into(),
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(
            s,
            r#"{"alpha":-1.5,"f_measure":0.5,"precision":0.25,"recall":1.0,"valid_set":"a","invalid_set":"b"}"#
        );
    }
}
