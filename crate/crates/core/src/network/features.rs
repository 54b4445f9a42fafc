use serde::{Deserialize, Serialize};

use crate::density::GmmParams;
use crate::error::{Error, Result};

/// Features of a recommendable item.
///
/// `token_ids` are hashed title tokens, `categorical_ids` metadata the user
/// never sees (one id per categorical feature), `content_reals` a dense
/// content representation of the title.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFeatures {
    pub token_ids: Vec<usize>,
    pub categorical_ids: Vec<usize>,
    pub content_reals: Vec<f64>,
}

impl TargetFeatures {
    pub fn validate(&self, token_vocab: usize, categorical_vocab: &[usize]) -> Result<()> {
        if self.token_ids.is_empty() {
            return Err(Error::data("target has an empty token list"));
        }
        if let Some(bad) = self.token_ids.iter().find(|t| **t >= token_vocab) {
            return Err(Error::data(format!(
                "feature token: index {bad} out of range for vocabulary {token_vocab}"
            )));
        }
        check_ids(
            "target categorical",
            &self.categorical_ids,
            categorical_vocab,
        )?;
        if self.content_reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite target content feature"));
        }
        Ok(())
    }
}

/// Features of the placement a target is shown in (publisher, device, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub context_ids: Vec<usize>,
    #[serde(default)]
    pub context_reals: Vec<f64>,
}

impl ContextFeatures {
    pub fn categorical(ids: Vec<usize>) -> Self {
        Self {
            context_ids: ids,
            context_reals: Vec::new(),
        }
    }

    pub fn validate(&self, context_vocab: &[usize]) -> Result<()> {
        check_ids("context", &self.context_ids, context_vocab)?;
        if self.context_reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite context feature"));
        }
        Ok(())
    }
}

fn check_ids(what: &str, ids: &[usize], vocab: &[usize]) -> Result<()> {
    if ids.len() != vocab.len() {
        return Err(Error::data(format!(
            "{what}: expected {} categorical ids, got {}",
            vocab.len(),
            ids.len()
        )));
    }
    for (i, (id, size)) in ids.iter().zip(vocab).enumerate() {
        if id >= size {
            return Err(Error::data(format!(
                "feature {what}[{i}]: index {id} out of range for vocabulary {size}"
            )));
        }
    }
    Ok(())
}

/// Predictive mean with the three separated standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// Mixture mean, log-calibrated CTR.
    pub mean: f64,
    pub data_std: f64,
    pub model_std: f64,
    pub measurement_std: f64,
    pub gmm: GmmParams,
    /// Number of stochastic passes behind `model_std`. With fewer than two
    /// passes `model_std` is reported as 0 and carries no information.
    pub mc_passes: usize,
}

impl UncertaintyReport {
    pub fn model_std_defined(&self) -> bool {
        self.mc_passes >= 2
    }
}

/// Population standard deviation of a sequence of point predictions:
/// `sqrt(mean(ŷ²) − mean(ŷ)²)`, the uncorrected estimator.
///
/// Constant sequences return exactly 0; tiny negative radicands from
/// rounding are clamped to 0.
pub fn mc_std(predictions: &[f64]) -> f64 {
    let Some(first) = predictions.first() else {
        return 0.0;
    };
    if predictions.iter().all(|p| p == first) {
        return 0.0;
    }
    let t = predictions.len() as f64;
    let mean = predictions.iter().sum::<f64>() / t;
    let mean_sq = predictions.iter().map(|p| p * p).sum::<f64>() / t;
    (mean_sq - mean * mean).max(0.0).sqrt()
}
