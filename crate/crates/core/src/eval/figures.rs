//! Offline analysis runs on a simulated training pool, producing the rows of
//! the report CSVs.

use std::collections::BTreeSet;
use std::io::Write;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{
    descriptor_kde, model_uncertainty_vs_pdf_report, mse_eval, retrain_delta_report, spearman,
    uncertainty_vs_r_report, BucketReport, FineTune,
};
use crate::dataset::{build_pool, mix64, split, Sample};
use crate::error::{Error, Result};
use crate::network::{
    Calibration, ContextFeatures, DdnNetwork, LossKind, NetworkConfig, TargetFeatures,
};
use crate::sim::{simulate_logs, EmpiricalGreedy, Lexicon, Scenario, TargetArm};

/// Settings of the offline analyses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Days of logged traffic in the pool.
    pub days: i64,
    /// Exploration share and threshold of the logging policy.
    pub logging_epsilon: f64,
    pub logging_explore_threshold: u64,
    /// Rows with fewer impressions are left out of the pool.
    pub min_impressions: u64,
    pub validation_fraction: f64,
    pub network: NetworkConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub r_buckets: usize,
    pub pdf_buckets: usize,
    pub mc_passes: usize,
    /// Pools of the noisy-vs-clean comparison: `r < high_noise_max_r` and
    /// `r >= low_noise_min_r`.
    pub high_noise_max_r: u64,
    pub low_noise_min_r: u64,
    /// Group that never arrives in the market; its members form the
    /// held-out cluster of the injection analysis.
    pub cluster_group: String,
    pub cluster_size: usize,
    pub injected_r: u64,
    pub fine_tune_steps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            days: 90,
            logging_epsilon: 0.2,
            logging_explore_threshold: 2000,
            min_impressions: 10,
            validation_fraction: 0.2,
            network: NetworkConfig::default(),
            epochs: 15,
            batch_size: 64,
            r_buckets: 10,
            pdf_buckets: 10,
            mc_passes: 30,
            high_noise_max_r: 500,
            low_noise_min_r: 5000,
            cluster_group: "automotive".into(),
            cluster_size: 40,
            injected_r: 5000,
            fine_tune_steps: 300,
        }
    }
}

/// A simulated pool split by target.
#[derive(Clone, Debug)]
pub struct AnalysisPool {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub calibration: Calibration,
    pub network: NetworkConfig,
}

impl AnalysisPool {
    /// Logs `cfg.days` days of the market under a model-free ε-greedy
    /// policy and turns them into labeled samples.
    pub fn simulate(sc: &Scenario, cfg: &AnalysisConfig, seed: u64) -> Result<Self> {
        let mut policy = EmpiricalGreedy::new(cfg.logging_epsilon, cfg.logging_explore_threshold);
        let (logs, _) = simulate_logs(sc, &mut policy, cfg.days, seed)?;
        let logs: Vec<_> = logs
            .into_iter()
            .filter(|l| l.r >= cfg.min_impressions)
            .collect();
        let pool = build_pool(&logs, None)?;
        let (train, validation) = split(&pool.samples, cfg.validation_fraction, seed)?;
        info!(
            "analysis pool: {} train / {} validation samples",
            train.len(),
            validation.len()
        );
        Ok(Self {
            train,
            validation,
            calibration: Calibration::from_map(&pool.baselines),
            network: cfg.network.clone().with_vocab(&sc.vocab_sizes()),
        })
    }

    /// Wraps an existing split; the calibration is taken from the samples.
    pub fn from_samples(
        train: Vec<Sample>,
        validation: Vec<Sample>,
        network: NetworkConfig,
    ) -> Self {
        let all: Vec<Sample> = train.iter().chain(&validation).cloned().collect();
        Self {
            calibration: Calibration::from_samples(&all),
            train,
            validation,
            network,
        }
    }

    /// Trains a fresh network of `kind` on `samples` (the train side when
    /// `None`).
    pub fn train_model(
        &self,
        kind: LossKind,
        samples: Option<&[Sample]>,
        cfg: &AnalysisConfig,
        seed: u64,
    ) -> Result<DdnNetwork> {
        let samples = samples.unwrap_or(&self.train);
        let mut net = DdnNetwork::new(NetworkConfig {
            seed,
            ..self.network.clone()
        })?;
        net.set_calibration(self.calibration.clone());
        if !samples.is_empty() {
            net.fit_epochs(samples, kind, cfg.epochs, cfg.batch_size)?;
        }
        Ok(net)
    }
}

/// A bucketed curve with its rank correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub model_kind: String,
    pub seed: u64,
    pub buckets: Vec<BucketReport>,
    /// Spearman ρ and p-value of bucket key vs bucket mean.
    pub rho: f64,
    pub p_value: f64,
}

impl Curve {
    fn new(model_kind: &str, seed: u64, buckets: Vec<BucketReport>) -> Result<Self> {
        let keys: Vec<f64> = buckets.iter().map(|b| b.key_median).collect();
        let means: Vec<f64> = buckets.iter().map(|b| b.mean).collect();
        let (rho, p_value) = spearman(&keys, &means)?;
        Ok(Self {
            model_kind: model_kind.to_string(),
            seed,
            buckets,
            rho,
            p_value,
        })
    }
}

/// Predicted data std against impression count on the training pool.
pub fn data_std_curve(
    net: &DdnNetwork,
    kind: LossKind,
    pool: &AnalysisPool,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Curve> {
    Curve::new(
        kind.as_str(),
        seed,
        uncertainty_vs_r_report(net, &pool.train, cfg.r_buckets)?,
    )
}

/// Distinct (target, context) pairs of `samples`, in first-seen order.
pub fn distinct_pairs(samples: &[Sample]) -> Vec<(TargetFeatures, ContextFeatures)> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .filter(|s| seen.insert((s.target_id, s.context.context_ids.clone())))
        .map(|s| (s.target.clone(), s.context.clone()))
        .collect()
}

fn distinct_targets(samples: &[Sample]) -> Vec<TargetFeatures> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .filter(|s| seen.insert(s.target_id))
        .map(|s| s.target.clone())
        .collect()
}

/// Model std of validation pairs against the density of their target
/// descriptors among the training targets.
pub fn model_std_curve(
    net: &DdnNetwork,
    kind: LossKind,
    pool: &AnalysisPool,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Curve> {
    let kde = descriptor_kde(net, &distinct_targets(&pool.train))?;
    let pairs = distinct_pairs(&pool.validation);
    let buckets = model_uncertainty_vs_pdf_report(
        net,
        &kde,
        &pairs,
        cfg.mc_passes,
        mix64(seed ^ 0x6b6465),
        cfg.pdf_buckets,
    )?;
    Curve::new(kind.as_str(), seed, buckets)
}

/// Cluster members' model std before and after one of them joins training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionResult {
    pub seed: u64,
    pub injected_target: u64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl InjectionResult {
    pub fn mean_before(&self) -> f64 {
        self.before.iter().sum::<f64>() / self.before.len().max(1) as f64
    }

    pub fn mean_after(&self) -> f64 {
        self.after.iter().sum::<f64>() / self.after.len().max(1) as f64
    }
}

/// Draws members of the never-arriving group, injects one (seen `injected_r`
/// times in the busiest publisher) and fine-tunes two copies of `net` on
/// the training pool with and without it.
pub fn injection(
    net: &DdnNetwork,
    kind: LossKind,
    sc: &Scenario,
    pool: &AnalysisPool,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<InjectionResult> {
    let group = sc
        .groups
        .iter()
        .position(|g| g.name == cfg.cluster_group)
        .ok_or_else(|| Error::config(format!("scenario has no group {:?}", cfg.cluster_group)))?;
    if cfg.cluster_size < 2 {
        return Err(Error::config(
            "the held-out cluster needs at least two members",
        ));
    }
    let lex = Lexicon::new(sc);
    // Ids far above anything the market creates.
    let first_id = 1u64 << 40;
    let members: Vec<TargetArm> = (0..cfg.cluster_size as u64)
        .map(|k| TargetArm::generate(sc, &lex, first_id + k, group, 0))
        .collect();
    let busiest = sc
        .traffic_shares()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let ctx = sc.context(busiest);
    let chosen = &members[0];
    let p = chosen.true_ctr(sc, busiest, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x696e6a));
    let clicks = Binomial::new(cfg.injected_r, p)
        .map_err(|e| Error::numeric(e.to_string()))?
        .sample(&mut rng);
    let baseline = net.calibration().baseline(&ctx);
    let injected = Sample {
        target_id: chosen.target_id,
        target: chosen.features.clone(),
        context: ctx.clone(),
        r: cfg.injected_r,
        clicks,
        y: crate::noise::empirical_log_ctr(
            crate::noise::ImpressionRecord::new(cfg.injected_r, clicks)?,
            baseline,
        )?,
        calibration_baseline: baseline,
        day: 0,
        true_ctr: Some(p),
        group: Some(group),
    };
    let cluster: Vec<_> = members[1..]
        .iter()
        .flat_map(|m| (0..sc.publishers.len()).map(move |c| (m.features.clone(), sc.context(c))))
        .collect();
    let tune = FineTune {
        kind,
        steps: cfg.fine_tune_steps,
        batch_size: cfg.batch_size,
        seed,
    };
    let delta = retrain_delta_report(
        net,
        &pool.train,
        &cluster,
        &[injected],
        &tune,
        cfg.mc_passes,
        mix64(seed ^ 0x636c75),
    )?;
    Ok(InjectionResult {
        seed,
        injected_target: chosen.target_id,
        before: delta.before,
        after: delta.after,
    })
}

/// Clean-label validation MSE of MDN and DDN trained on one noise pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoolResult {
    pub pool: String,
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub mdn_mse: f64,
    pub ddn_mse: f64,
}

impl NoisePoolResult {
    /// How much lower DDN's error is than MDN's.
    pub fn ddn_advantage(&self) -> f64 {
        self.mdn_mse - self.ddn_mse
    }
}

/// Trains MDN and DDN (same initialization) on the rows of `pool` whose
/// impression count satisfies `keep`, and scores both on the matching
/// validation rows.
pub fn noise_pool_comparison(
    pool: &AnalysisPool,
    name: &str,
    keep: impl Fn(u64) -> bool,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<NoisePoolResult> {
    let train: Vec<Sample> = pool.train.iter().filter(|s| keep(s.r)).cloned().collect();
    let validation: Vec<Sample> = pool
        .validation
        .iter()
        .filter(|s| keep(s.r))
        .cloned()
        .collect();
    if train.is_empty() || validation.is_empty() {
        return Err(Error::data(format!(
            "{name} pool has {} training and {} validation rows",
            train.len(),
            validation.len()
        )));
    }
    let mdn = pool.train_model(LossKind::Mdn, Some(&train), cfg, seed)?;
    let ddn = pool.train_model(LossKind::Ddn, Some(&train), cfg, seed)?;
    Ok(NoisePoolResult {
        pool: name.to_string(),
        seed,
        train_size: train.len(),
        validation_size: validation.len(),
        mdn_mse: mse_eval(&mdn, &validation)?,
        ddn_mse: mse_eval(&ddn, &validation)?,
    })
}

pub fn noise_pools(
    pool: &AnalysisPool,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<[NoisePoolResult; 2]> {
    let hi = cfg.high_noise_max_r;
    let lo = cfg.low_noise_min_r;
    Ok([
        noise_pool_comparison(pool, "high_noise", |r| r < hi, cfg, seed)?,
        noise_pool_comparison(pool, "low_noise", |r| r >= lo, cfg, seed)?,
    ])
}

pub const CURVE_HEADER: &str =
    "model_kind,seed,bucket,key_lo,key_hi,key_median,count,mean,std_error";
pub const INJECTION_HEADER: &str = "seed,injected_target,member,model_std_before,model_std_after";
pub const NOISE_POOL_HEADER: &str =
    "pool,seed,train_size,validation_size,mdn_mse,ddn_mse,ddn_advantage";

pub fn write_curves<W: Write>(out: &mut W, curves: &[Curve]) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for c in curves {
        for (i, b) in c.buckets.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.model_kind, c.seed, i, b.lo, b.hi, b.key_median, b.count, b.mean, b.std_error
            )?;
        }
    }
    Ok(())
}

pub fn write_injections<W: Write>(out: &mut W, results: &[InjectionResult]) -> Result<()> {
    writeln!(out, "{INJECTION_HEADER}")?;
    for r in results {
        for (i, (b, a)) in r.before.iter().zip(&r.after).enumerate() {
            writeln!(out, "{},{},{},{},{}", r.seed, r.injected_target, i, b, a)?;
        }
    }
    Ok(())
}

pub fn write_noise_pools<W: Write>(out: &mut W, results: &[NoisePoolResult]) -> Result<()> {
    writeln!(out, "{NOISE_POOL_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.pool,
            r.seed,
            r.train_size,
            r.validation_size,
            r.mdn_mse,
            r.ddn_mse,
            r.ddn_advantage()
        )?;
    }
    Ok(())
}
