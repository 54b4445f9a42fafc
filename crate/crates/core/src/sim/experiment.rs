//! Closed-loop experiments: a model-guided policy that retrains on the data
//! it collects, and the daily metric series of a run.

use std::collections::VecDeque;
use std::io::Write;

use log::debug;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::market::{
    DayLog, EmpiricalGreedy, Event, FixedArm, Market, Oracle, Policy, UniformRandom,
};
use super::scenario::Scenario;
use crate::bandit::{self, ArmScore, Branch, SigmaSource, StrategyConfig};
use crate::dataset::{build_pool, is_validation_target, mix64, LogRecord, Sample};
use crate::error::{Error, Result};
use crate::network::{Calibration, DdnNetwork, LossKind, NetworkConfig};
use crate::noise;

/// When and how the model-guided policy (re)trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    /// Days of uniformly random traffic before the first model exists.
    pub warmup_days: i64,
    pub initial_steps: usize,
    /// Retrain after every this many model-guided days.
    pub retrain_every: i64,
    pub retrain_steps: usize,
    pub batch_size: usize,
    /// Sliding training window, in days.
    pub window_days: usize,
    /// Share of targets held out of training for the validation metric.
    pub validation_fraction: f64,
    /// Training rows with fewer impressions than this are left out.
    pub min_impressions: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            warmup_days: 3,
            initial_steps: 3000,
            retrain_every: 3,
            retrain_steps: 600,
            batch_size: 64,
            window_days: 14,
            validation_fraction: 0.1,
            min_impressions: 10,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_days < 1
            || self.retrain_every < 1
            || self.window_days == 0
            || self.batch_size == 0
        {
            return Err(Error::config(
                "warmup_days, retrain_every, window_days and batch_size must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct Score {
    mean: f64,
    std: f64,
}

/// ε-split selection with a network's predictions as payoff estimates.
///
/// The payoff of target `t` in publisher `c` is its predicted log CTR plus
/// `ln cpc`, so ranking by it ranks by expected revenue per impression.
pub struct ModelPolicy {
    kind: LossKind,
    strategy: StrategyConfig,
    schedule: TrainingSchedule,
    net: DdnNetwork,
    seed: u64,
    trained: bool,
    window: VecDeque<Vec<LogRecord>>,
    scores: Vec<Score>,
    pubs: usize,
    /// Clean-label MSE of the current model on the held-out targets shown
    /// on the most recent day.
    pub last_validation_mse: Option<f64>,
    exploit_buf: Vec<ArmScore>,
    explore_buf: Vec<ArmScore>,
}

impl ModelPolicy {
    pub fn new(
        kind: LossKind,
        strategy: StrategyConfig,
        schedule: TrainingSchedule,
        network: NetworkConfig,
        seed: u64,
    ) -> Result<Self> {
        strategy.validate()?;
        schedule.validate()?;
        // A point-estimate model has no spread to be optimistic about; its
        // exploration share is spent uniformly (plain ε-greedy).
        let strategy = match kind {
            LossKind::Reg => StrategyConfig {
                explore_rule: bandit::ExploreRule::Uniform,
                ..strategy
            },
            _ => strategy,
        };
        let net = DdnNetwork::new(NetworkConfig { seed, ..network })?;
        Ok(Self {
            kind,
            strategy,
            schedule,
            net,
            seed,
            trained: false,
            window: VecDeque::new(),
            scores: Vec::new(),
            pubs: 0,
            last_validation_mse: None,
            exploit_buf: Vec::new(),
            explore_buf: Vec::new(),
        })
    }

    pub fn network(&self) -> &DdnNetwork {
        &self.net
    }

    fn needs_model_std(&self) -> bool {
        self.kind != LossKind::Reg
            && self.strategy.epsilon > 0.0
            && self.strategy.a > 0.0
            && self.strategy.explore_rule == bandit::ExploreRule::Ucb
            && self.strategy.uses(SigmaSource::Model)
            && self.net.config().mc_passes >= 2
    }

    fn held_out(&self, target_id: u64) -> bool {
        self.schedule.validation_fraction > 0.0
            && is_validation_target(target_id, self.schedule.validation_fraction, self.seed)
    }

    fn retrain(&mut self, steps: usize) -> Result<()> {
        let logs: Vec<LogRecord> = self
            .window
            .iter()
            .flatten()
            .filter(|r| r.r >= self.schedule.min_impressions && !self.held_out(r.target_id))
            .cloned()
            .collect();
        let pool = build_pool(&logs, None)?;
        if pool.samples.is_empty() {
            return Ok(());
        }
        self.net
            .set_calibration(Calibration::from_map(&pool.baselines));
        let curve =
            self.net
                .fit_steps(&pool.samples, self.kind, steps, self.schedule.batch_size)?;
        debug!(
            "{} retrained on {} samples, last loss {:?}",
            self.kind,
            pool.samples.len(),
            curve.last()
        );
        self.trained = true;
        Ok(())
    }

    fn validation_mse(&self, market: &Market, log: &DayLog) -> Result<Option<f64>> {
        let rows: Vec<_> = log
            .records
            .iter()
            .filter(|r| self.held_out(r.target_id))
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let mut se = 0.0;
        for r in &rows {
            let arm = &market.arms[r.target_id as usize];
            let ctx = market.scenario.context(r.publisher);
            let baseline = self.net.calibration().baseline(&ctx);
            let gmm = self.net.predict(&arm.features, &ctx)?;
            let clean = (r.true_ctr / baseline).ln();
            se += (crate::density::mixture_mean(&gmm) - clean).powi(2);
        }
        Ok(Some(se / rows.len() as f64))
    }
}

impl Policy for ModelPolicy {
    fn prepare(&mut self, market: &Market) -> Result<()> {
        if !self.trained {
            return Ok(());
        }
        let pubs = market.publishers();
        self.pubs = pubs;
        self.scores = vec![Score::default(); market.arms.len() * pubs];
        let contexts: Vec<_> = (0..pubs).map(|p| market.scenario.context(p)).collect();
        let targets: Vec<_> = market
            .live
            .iter()
            .map(|i| market.arms[*i].features.clone())
            .collect();
        let grid = self.net.predict_grid(&targets, &contexts, 1, 0)?;

        let threshold = self.strategy.explore_impression_threshold;
        let explore: Vec<usize> = (0..market.live.len())
            .filter(|k| market.lifetime[market.live[*k]] < threshold)
            .collect();
        let mut model_std = vec![0.0; grid.len()];
        if self.needs_model_std() && !explore.is_empty() {
            let subset: Vec<_> = explore.iter().map(|k| targets[*k].clone()).collect();
            let seed = mix64(self.seed ^ mix64(market.day as u64));
            let mc =
                self.net
                    .predict_grid(&subset, &contexts, self.net.config().mc_passes, seed)?;
            for (j, k) in explore.iter().enumerate() {
                for p in 0..pubs {
                    model_std[k * pubs + p] = mc[j * pubs + p].model_std;
                }
            }
        }

        let use_data = self.kind != LossKind::Reg && self.strategy.uses(SigmaSource::Data);
        let use_model = self.strategy.uses(SigmaSource::Model);
        let use_meas = self.strategy.uses(SigmaSource::Measurement);
        for (k, &arm) in market.live.iter().enumerate() {
            let a = &market.arms[arm];
            for (p, ctx) in contexts.iter().enumerate() {
                let pred = &grid[k * pubs + p];
                let meas = if use_meas {
                    let r = market.lifetime[arm].max(1);
                    noise::sigma_eps(pred.mean, r, self.net.calibration().baseline(ctx))?
                } else {
                    0.0
                };
                let data = if use_data { pred.data_std } else { 0.0 };
                let model = if use_model {
                    model_std[k * pubs + p]
                } else {
                    0.0
                };
                self.scores[arm * pubs + p] = Score {
                    mean: pred.mean + a.cpc.ln(),
                    std: (data * data + model * model + meas * meas).sqrt(),
                };
            }
        }
        Ok(())
    }

    fn choose(&mut self, event: &Event<'_>, rng: &mut ChaCha8Rng) -> Result<(usize, Branch)> {
        if !self.trained {
            return Ok((
                event.slate[rng.random_range(0..event.slate.len())],
                Branch::Explore,
            ));
        }
        self.exploit_buf.clear();
        self.explore_buf.clear();
        for &c in event.slate {
            let s = self.scores[c * self.pubs + event.publisher];
            let score = ArmScore::new(c as u64, s.mean, s.std, self.strategy.a);
            self.exploit_buf.push(score);
            if event.lifetime[c] < self.strategy.explore_impression_threshold {
                self.explore_buf.push(score);
            }
        }
        let (id, branch) = bandit::select_epsilon_split(
            &self.exploit_buf,
            &self.explore_buf,
            &self.strategy,
            rng,
        )?;
        Ok((id as usize, branch))
    }

    fn observe(&mut self, market: &Market, log: &DayLog) -> Result<()> {
        self.last_validation_mse = if self.trained {
            self.validation_mse(market, log)?
        } else {
            None
        };
        self.window.push_back(market.log_records(log));
        while self.window.len() > self.schedule.window_days {
            self.window.pop_front();
        }
        let done = log.day + 1;
        if done == self.schedule.warmup_days {
            self.retrain(self.schedule.initial_steps)?;
        } else if done > self.schedule.warmup_days
            && (done - self.schedule.warmup_days) % self.schedule.retrain_every == 0
        {
            self.retrain(self.schedule.retrain_steps)?;
        }
        Ok(())
    }
}

/// Strategy driving one arm of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StrategySpec {
    Model {
        kind: LossKind,
        strategy: StrategyConfig,
    },
    Oracle,
    Random,
    Fixed {
        target: usize,
    },
    EmpiricalGreedy {
        epsilon: f64,
        explore_threshold: u64,
    },
}

impl StrategySpec {
    /// Value of the `model_kind` column for this strategy.
    pub fn label(&self) -> String {
        match self {
            StrategySpec::Model { kind, .. } => kind.to_string(),
            StrategySpec::Oracle => "oracle".into(),
            StrategySpec::Random => "random".into(),
            StrategySpec::Fixed { target } => format!("fixed-{target}"),
            StrategySpec::EmpiricalGreedy { .. } => "empirical".into(),
        }
    }
}

/// Model, training schedule and length of a closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub days: i64,
    pub network: NetworkConfig,
    pub schedule: TrainingSchedule,
}

/// Network used inside the closed loop: smaller than the offline default so
/// that a 90-day run stays in the minute range.
pub fn closed_loop_network() -> NetworkConfig {
    NetworkConfig {
        token_dim: 8,
        categorical_dim: 4,
        target_hidden: vec![32, 16],
        context_hidden: vec![16],
        fusion_dim: 16,
        mc_passes: 10,
        ..NetworkConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            days: 90,
            network: closed_loop_network(),
            schedule: TrainingSchedule::default(),
        }
    }
}

/// One row of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub day: i64,
    pub model_kind: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "day,model_kind,metric,value,seed";

pub fn write_metrics<W: Write>(out: &mut W, rows: &[MetricRow], header: bool) -> Result<()> {
    if header {
        writeln!(out, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.day, r.model_kind, r.metric, r.value, r.seed
        )?;
    }
    Ok(())
}

pub fn make_policy(
    spec: &StrategySpec,
    sc: &Scenario,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Box<dyn Policy>> {
    Ok(match spec {
        StrategySpec::Model { kind, strategy } => {
            let network = cfg.network.clone().with_vocab(&sc.vocab_sizes());
            Box::new(ModelPolicy::new(
                *kind,
                strategy.clone(),
                cfg.schedule.clone(),
                network,
                seed,
            )?)
        }
        StrategySpec::Oracle => Box::<Oracle>::default(),
        StrategySpec::Random => Box::new(UniformRandom),
        StrategySpec::Fixed { target } => Box::new(FixedArm { target: *target }),
        StrategySpec::EmpiricalGreedy {
            epsilon,
            explore_threshold,
        } => Box::new(EmpiricalGreedy::new(*epsilon, *explore_threshold)),
    })
}

/// Output of [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct ExperimentRun {
    pub metrics: Vec<MetricRow>,
    pub days: Vec<DayLog>,
}

/// Runs `cfg.days` days of the market under one strategy. The result is a
/// pure function of (scenario, strategy, config, seed).
pub fn run_experiment(
    sc: &Scenario,
    spec: &StrategySpec,
    label: &str,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentRun> {
    if cfg.days < 0 {
        return Err(Error::config("days must be >= 0"));
    }
    let mut market = Market::new(sc.clone(), seed)?;
    let mut run = ExperimentRun::default();
    if cfg.days == 0 {
        return Ok(run);
    }
    let mut model = match spec {
        StrategySpec::Model { kind, strategy } => {
            let network = cfg.network.clone().with_vocab(&sc.vocab_sizes());
            Some(ModelPolicy::new(
                *kind,
                strategy.clone(),
                cfg.schedule.clone(),
                network,
                seed,
            )?)
        }
        _ => None,
    };
    let mut other = match model {
        Some(_) => None,
        None => Some(make_policy(spec, sc, cfg, seed)?),
    };
    for _ in 0..cfg.days {
        let log = match (&mut model, &mut other) {
            (Some(m), _) => market.run_day(m)?,
            (None, Some(o)) => market.run_day(o.as_mut())?,
            (None, None) => unreachable!("one policy is always built"),
        };
        let day = log.day;
        let mut push = |metric: &str, value: f64| {
            run.metrics.push(MetricRow {
                day,
                model_kind: label.to_string(),
                metric: metric.to_string(),
                value,
                seed,
            })
        };
        push("rpm", log.rpm());
        push("target_throughput", log.new_targets.len() as f64);
        push("advertiser_throughput", log.new_advertisers as f64);
        push(
            "explore_share",
            log.explore_impressions as f64 / log.impressions.max(1) as f64,
        );
        if let Some(mse) = model.as_ref().and_then(|m| m.last_validation_mse) {
            push("validation_mse", mse);
        }
        run.days.push(log);
    }
    Ok(run)
}

/// Simulates `days` days under a fixed policy and returns the training rows.
pub fn simulate_logs(
    sc: &Scenario,
    policy: &mut dyn Policy,
    days: i64,
    seed: u64,
) -> Result<(Vec<LogRecord>, Vec<DayLog>)> {
    let mut market = Market::new(sc.clone(), seed)?;
    let mut logs = Vec::new();
    let mut days_out = Vec::new();
    for _ in 0..days {
        let log = market.run_day(policy)?;
        logs.extend(market.log_records(&log));
        days_out.push(log);
    }
    Ok((logs, days_out))
}

/// Converts rows to labeled samples using per-publisher empirical baselines.
pub fn samples_from_logs(logs: &[LogRecord]) -> Result<Vec<Sample>> {
    Ok(build_pool(logs, None)?.samples)
}
