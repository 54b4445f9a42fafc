//! Offline analyses of trained models: uncertainty against impression
//! count and feature-space density, the effect of adding one sample, and
//! clean-label error.

pub mod figures;
mod kde;
mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kde::KdeModel;
pub use stats::{average_ranks, kendall_tau, spearman};

use crate::dataset::Sample;
use crate::density;
use crate::error::{Error, Result};
use crate::network::{ContextFeatures, DdnNetwork, LossKind, TargetFeatures};

/// Summary of one bucket of an evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// Inclusive lower and upper key bounds of the members.
    pub lo: f64,
    pub hi: f64,
    /// Median key of the members.
    pub key_median: f64,
    pub count: usize,
    pub mean: f64,
    /// Standard error of `mean` (0 for single-member buckets).
    pub std_error: f64,
}

fn summarize(members: &[(f64, f64)]) -> BucketReport {
    let n = members.len();
    let mut keys: Vec<f64> = members.iter().map(|m| m.0).collect();
    keys.sort_by(f64::total_cmp);
    let key_median = if n % 2 == 1 {
        keys[n / 2]
    } else {
        0.5 * (keys[n / 2 - 1] + keys[n / 2])
    };
    let mean = members.iter().map(|m| m.1).sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = members.iter().map(|m| (m.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    BucketReport {
        lo: keys[0],
        hi: keys[n - 1],
        key_median,
        count: n,
        mean,
        std_error,
    }
}

fn check_keys(keys: &[f64], values: &[f64]) -> Result<()> {
    if keys.len() != values.len() {
        return Err(Error::usage("bucket keys and values differ in length"));
    }
    if keys.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite bucket key or value"));
    }
    Ok(())
}

/// Buckets by `keys` on `n` log-spaced intervals between the smallest and
/// largest (positive) key. Empty intervals are skipped; the result is in
/// ascending key order and partitions the input.
pub fn log_spaced_buckets(keys: &[f64], values: &[f64], n: usize) -> Result<Vec<BucketReport>> {
    check_keys(keys, values)?;
    if n == 0 {
        return Err(Error::config("bucket count must be positive"));
    }
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    if keys.iter().any(|k| *k <= 0.0) {
        return Err(Error::data("log-spaced buckets need positive keys"));
    }
    let lo = keys.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let width = (hi - lo) / n as f64;
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for (k, v) in keys.iter().zip(values) {
        let b = if width > 0.0 {
            (((k.ln() - lo) / width) as usize).min(n - 1)
        } else {
            0
        };
        groups[b].push((*k, *v));
    }
    Ok(groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| summarize(g))
        .collect())
}

/// Buckets by rank of `keys` into `n` groups of near-equal size (the first
/// `len % n` groups get one extra member). Ascending key order; ties are
/// broken by input position.
pub fn quantile_buckets(keys: &[f64], values: &[f64], n: usize) -> Result<Vec<BucketReport>> {
    check_keys(keys, values)?;
    if n == 0 {
        return Err(Error::config("bucket count must be positive"));
    }
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|a, b| keys[*a].total_cmp(&keys[*b]).then(a.cmp(b)));
    let (base, extra) = (idx.len() / n, idx.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for b in 0..n {
        let size = base + usize::from(b < extra);
        if size == 0 {
            continue;
        }
        let members: Vec<(f64, f64)> = idx[start..start + size]
            .iter()
            .map(|i| (keys[*i], values[*i]))
            .collect();
        out.push(summarize(&members));
        start += size;
    }
    Ok(out)
}

/// Predicted data uncertainty of every sample, bucketed by log-spaced `r`.
pub fn uncertainty_vs_r_report(
    net: &DdnNetwork,
    samples: &[Sample],
    n_buckets: usize,
) -> Result<Vec<BucketReport>> {
    let mut keys = Vec::with_capacity(samples.len());
    let mut values = Vec::with_capacity(samples.len());
    for s in samples {
        let g = net.predict(&s.target, &s.context)?;
        keys.push(s.r as f64);
        values.push(density::mixture_std(&g)?);
    }
    log_spaced_buckets(&keys, &values, n_buckets)
}

/// Scott's-rule density estimate over the target descriptors of `targets`.
pub fn descriptor_kde(net: &DdnNetwork, targets: &[TargetFeatures]) -> Result<KdeModel> {
    let points = targets
        .iter()
        .map(|t| net.target_descriptor(t))
        .collect::<Result<Vec<_>>>()?;
    KdeModel::scott(points)
}

/// Model uncertainty of (target, context) pairs against the density of
/// their target descriptors under `kde`, bucketed by density percentile.
///
/// Bucket keys are log densities.
pub fn model_uncertainty_vs_pdf_report(
    net: &DdnNetwork,
    kde: &KdeModel,
    pairs: &[(TargetFeatures, ContextFeatures)],
    passes: usize,
    seed: u64,
    n_buckets: usize,
) -> Result<Vec<BucketReport>> {
    let stds = model_stds(net, pairs, passes, seed)?;
    let keys = pairs
        .iter()
        .map(|(t, _)| kde.log_density(&net.target_descriptor(t)?))
        .collect::<Result<Vec<_>>>()?;
    quantile_buckets(&keys, &stds, n_buckets)
}

/// MC-dropout standard deviation of each pair's predicted mean.
pub fn model_stds(
    net: &DdnNetwork,
    pairs: &[(TargetFeatures, ContextFeatures)],
    passes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(t, c)| {
            Ok(net
                .predict_with_uncertainty(t, c, None, passes, seed)?
                .model_std)
        })
        .collect()
}

/// Deterministic fine-tuning: `steps` minibatches of `batch_size` rows drawn
/// from `train` with a generator seeded by `seed`, each batch followed by
/// every row of `extra`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTune {
    pub kind: LossKind,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl FineTune {
    pub fn run(
        &self,
        net: &mut DdnNetwork,
        train: &[Sample],
        extra: &[Sample],
    ) -> Result<Vec<f64>> {
        if train.is_empty() {
            return Err(Error::usage("cannot fine-tune on an empty dataset"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        net.reseed(self.seed);
        let mut curve = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let mut batch: Vec<Sample> = (0..self.batch_size)
                .map(|_| train[rng.random_range(0..train.len())].clone())
                .collect();
            batch.extend_from_slice(extra);
            curve.push(net.train_step(&batch, self.kind)?);
        }
        Ok(curve)
    }
}

/// Model uncertainty of a cluster's members before and after `injected`
/// joins the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainDelta {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl RetrainDelta {
    pub fn mean_before(&self) -> f64 {
        self.before.iter().sum::<f64>() / self.before.len().max(1) as f64
    }

    pub fn mean_after(&self) -> f64 {
        self.after.iter().sum::<f64>() / self.after.len().max(1) as f64
    }
}

/// Fine-tunes two copies of `net` with the same seeded procedure, one with
/// `injected` appended to every batch, and reports the cluster's model
/// uncertainty under each. With nothing injected the two runs coincide.
pub fn retrain_delta_report(
    net: &DdnNetwork,
    train: &[Sample],
    cluster: &[(TargetFeatures, ContextFeatures)],
    injected: &[Sample],
    tune: &FineTune,
    passes: usize,
    mc_seed: u64,
) -> Result<RetrainDelta> {
    let mut before = net.clone();
    tune.run(&mut before, train, &[])?;
    let mut after = net.clone();
    tune.run(&mut after, train, injected)?;
    Ok(RetrainDelta {
        before: model_stds(&before, cluster, passes, mc_seed)?,
        after: model_stds(&after, cluster, passes, mc_seed)?,
    })
}

/// Mean squared error between predicted mixture means and the noise-free
/// labels of `samples`.
pub fn mse_eval(net: &DdnNetwork, samples: &[Sample]) -> Result<f64> {
    mse_with(net, samples, |s| {
        s.clean_label().ok_or_else(|| {
            Error::data(format!(
                "sample of target {} has no ground-truth CTR",
                s.target_id
            ))
        })
    })
}

/// Mean squared error against the empirical labels `y`.
pub fn empirical_mse(net: &DdnNetwork, samples: &[Sample]) -> Result<f64> {
    mse_with(net, samples, |s| Ok(s.y))
}

fn mse_with(
    net: &DdnNetwork,
    samples: &[Sample],
    label: impl Fn(&Sample) -> Result<f64>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::usage("MSE over an empty set"));
    }
    let mut se = 0.0;
    for s in samples {
        let g = net.predict(&s.target, &s.context)?;
        se += (density::mixture_mean(&g) - label(s)?).powi(2);
    }
    Ok(se / samples.len() as f64)
}

/// Mean squared error of arbitrary predictions.
pub fn mse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::usage("MSE needs equally long, non-empty inputs"));
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / predictions.len() as f64)
}
