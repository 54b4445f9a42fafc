//! Arm selection: an ε share of traffic explores targets that have not been
//! shown much yet, the rest exploits the best predicted mean.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::UncertaintyReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Data,
    Model,
    Measurement,
}

/// How the explore branch picks among its pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreRule {
    /// Highest `mean + a·σ`.
    Ucb,
    /// Uniformly at random, ignoring scores (plain ε-greedy).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Share of traffic routed to the explore branch.
    pub epsilon: f64,
    /// UCB multiplier.
    pub a: f64,
    pub sigma_sources: Vec<SigmaSource>,
    pub explore_rule: ExploreRule,
    /// Targets with fewer lifetime impressions than this form the explore pool.
    pub explore_impression_threshold: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            a: 0.5,
            sigma_sources: vec![SigmaSource::Data, SigmaSource::Model],
            explore_rule: ExploreRule::Ucb,
            explore_impression_threshold: 2000,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon {} must lie in [0, 1]",
                self.epsilon
            )));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::config(format!(
                "UCB multiplier a = {} must be >= 0",
                self.a
            )));
        }
        if self.a > 0.0 && self.sigma_sources.is_empty() {
            return Err(Error::config("a > 0 needs at least one sigma source"));
        }
        Ok(())
    }

    pub fn uses(&self, source: SigmaSource) -> bool {
        self.sigma_sources.contains(&source)
    }
}

/// Quadrature sum of the selected standard deviations.
pub fn combined_sigma(rep: &UncertaintyReport, sources: &[SigmaSource]) -> Result<f64> {
    combine(rep.data_std, rep.model_std, rep.measurement_std, sources)
}

/// [`combined_sigma`] on bare components.
pub fn combine(data: f64, model: f64, measurement: f64, sources: &[SigmaSource]) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::config("sigma source set is empty"));
    }
    let mut var = 0.0;
    for s in [
        SigmaSource::Data,
        SigmaSource::Model,
        SigmaSource::Measurement,
    ] {
        if sources.contains(&s) {
            let v = match s {
                SigmaSource::Data => data,
                SigmaSource::Model => model,
                SigmaSource::Measurement => measurement,
            };
            var += v * v;
        }
    }
    Ok(var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmScore {
    pub target_id: u64,
    pub mean: f64,
    pub std_combined: f64,
    pub ucb_score: f64,
}

impl ArmScore {
    pub fn new(target_id: u64, mean: f64, std_combined: f64, a: f64) -> Self {
        Self {
            target_id,
            mean,
            std_combined,
            ucb_score: mean + a * std_combined,
        }
    }
}

/// Scores candidates under `cfg`. With `a = 0` no sources are required.
pub fn score_arms(
    candidates: &[(u64, UncertaintyReport)],
    cfg: &StrategyConfig,
) -> Result<Vec<ArmScore>> {
    candidates
        .iter()
        .map(|(id, rep)| {
            let std = if cfg.sigma_sources.is_empty() {
                0.0
            } else {
                combined_sigma(rep, &cfg.sigma_sources)?
            };
            Ok(ArmScore::new(*id, rep.mean, std, cfg.a))
        })
        .collect()
}

/// Id with the largest `key`; ties go to the smallest id. NaN keys lose.
pub fn argmax_by(scores: &[ArmScore], key: impl Fn(&ArmScore) -> f64) -> Result<u64> {
    let mut best: Option<(f64, u64)> = None;
    for s in scores {
        let k = key(s);
        if k.is_nan() {
            continue;
        }
        best = match best {
            None => Some((k, s.target_id)),
            Some((bk, bid)) => match k.partial_cmp(&bk) {
                Some(Ordering::Greater) => Some((k, s.target_id)),
                Some(Ordering::Equal) if s.target_id < bid => Some((k, s.target_id)),
                _ => Some((bk, bid)),
            },
        };
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::usage("no candidate with a finite score"))
}

/// Argmax of `mean + a·σ` over the candidates.
pub fn select_ucb(candidates: &[(u64, UncertaintyReport)], cfg: &StrategyConfig) -> Result<u64> {
    if candidates.is_empty() {
        return Err(Error::usage("cannot select from an empty candidate list"));
    }
    argmax_by(&score_arms(candidates, cfg)?, |s| s.ucb_score)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Exploit,
    Explore,
}

/// Routes to the explore pool with probability ε (when it is non-empty),
/// otherwise picks the highest mean from the exploit pool.
///
/// The coin is always drawn first so the random stream does not depend on
/// pool contents.
pub fn select_epsilon_split<R: Rng + ?Sized>(
    exploit_pool: &[ArmScore],
    explore_pool: &[ArmScore],
    cfg: &StrategyConfig,
    rng: &mut R,
) -> Result<(u64, Branch)> {
    let coin: f64 = rng.random();
    let explore = coin < cfg.epsilon && !explore_pool.is_empty();
    if explore {
        let id = match cfg.explore_rule {
            ExploreRule::Ucb => argmax_by(explore_pool, |s| s.ucb_score)?,
            ExploreRule::Uniform => explore_pool[rng.random_range(0..explore_pool.len())].target_id,
        };
        return Ok((id, Branch::Explore));
    }
    if exploit_pool.is_empty() {
        if explore_pool.is_empty() {
            return Err(Error::usage("both candidate pools are empty"));
        }
        // Nothing established yet: the explore pool is all there is.
        return Ok((argmax_by(explore_pool, |s| s.mean)?, Branch::Exploit));
    }
    Ok((argmax_by(exploit_pool, |s| s.mean)?, Branch::Exploit))
}
