//! Random hyperparameter search over network configurations.

use std::io::Write;

use log::info;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mix64, Sample};
use crate::error::{Error, Result};
use crate::eval::{empirical_mse, mse_eval};
use crate::network::{Calibration, DdnNetwork, LossKind, NetworkConfig};

/// Ranges the search samples from. Learning rate is log-uniform; the rest
/// are uniform picks from the listed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub dropout: Vec<f64>,
    pub components: Vec<usize>,
    pub token_dim: Vec<usize>,
    /// Candidate hidden stacks, shared by the target and context subnets.
    pub hidden: Vec<Vec<usize>>,
    pub fusion_dim: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (3e-4, 1e-2),
            dropout: vec![0.1, 0.2, 0.3, 0.4],
            components: vec![1, 2, 3, 5],
            token_dim: vec![8, 16, 32],
            hidden: vec![vec![32, 16], vec![64, 32], vec![128, 64], vec![64, 64, 32]],
            fusion_dim: vec![16, 32, 64],
            batch_size: vec![32, 64, 128],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config(
                "learning_rate range must satisfy 0 < lo <= hi",
            ));
        }
        if self.dropout.is_empty()
            || self.components.is_empty()
            || self.token_dim.is_empty()
            || self.hidden.is_empty()
            || self.fusion_dim.is_empty()
            || self.batch_size.is_empty()
        {
            return Err(Error::config(
                "every search dimension needs at least one value",
            ));
        }
        Ok(())
    }

    /// Draws one configuration on top of `base`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        base: &NetworkConfig,
        rng: &mut R,
    ) -> Result<(NetworkConfig, usize)> {
        self.validate()?;
        let (lo, hi) = self.learning_rate;
        let mut cfg = base.clone();
        cfg.optimizer.learning_rate = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
        cfg.dropout = *self.dropout.choose(rng).expect("non-empty");
        cfg.components = *self.components.choose(rng).expect("non-empty");
        cfg.token_dim = *self.token_dim.choose(rng).expect("non-empty");
        let hidden = self.hidden.choose(rng).expect("non-empty").clone();
        cfg.target_hidden = hidden.clone();
        cfg.context_hidden = hidden;
        cfg.fusion_dim = *self.fusion_dim.choose(rng).expect("non-empty");
        let batch = *self.batch_size.choose(rng).expect("non-empty");
        cfg.validate()?;
        Ok((cfg, batch))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: usize,
    pub epochs: usize,
    pub kind: LossKind,
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            epochs: 10,
            kind: LossKind::Ddn,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub network: NetworkConfig,
    pub batch_size: usize,
    pub validation_mse: f64,
}

/// Validation MSE of a network trained with `network` and `batch_size`:
/// against clean labels when every validation sample has them, else
/// against the empirical labels.
pub fn evaluate_config(
    network: &NetworkConfig,
    batch_size: usize,
    kind: LossKind,
    epochs: usize,
    train: &[Sample],
    validation: &[Sample],
    calibration: &Calibration,
) -> Result<f64> {
    let mut net = DdnNetwork::new(network.clone())?;
    net.set_calibration(calibration.clone());
    net.fit_epochs(train, kind, epochs, batch_size)?;
    if validation.iter().all(|s| s.true_ctr.is_some()) {
        mse_eval(&net, validation)
    } else {
        empirical_mse(&net, validation)
    }
}

/// Trial `index` of a search seeded with `seed`; a pure function of its
/// arguments, so trials can run in any order or in parallel.
pub fn run_trial(
    index: usize,
    base: &NetworkConfig,
    cfg: &SearchConfig,
    train: &[Sample],
    validation: &[Sample],
    calibration: &Calibration,
    seed: u64,
) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(index as u64)));
    let (mut network, batch_size) = cfg.space.sample(base, &mut rng)?;
    network.seed = mix64(seed.wrapping_add(index as u64));
    let validation_mse = evaluate_config(
        &network,
        batch_size,
        cfg.kind,
        cfg.epochs,
        train,
        validation,
        calibration,
    )?;
    info!("trial {index}: validation MSE {validation_mse:.5}");
    Ok(Trial {
        trial: index,
        network,
        batch_size,
        validation_mse,
    })
}

/// Orders trials by ascending MSE (non-finite last), ties by trial index.
pub fn rank_trials(trials: &mut [Trial]) {
    trials.sort_by(|a, b| {
        let key = |t: &Trial| {
            if t.validation_mse.is_finite() {
                t.validation_mse
            } else {
                f64::INFINITY
            }
        };
        key(a).total_cmp(&key(b)).then(a.trial.cmp(&b.trial))
    });
}

pub const TRIALS_HEADER: &str =
    "rank,trial,validation_mse,learning_rate,dropout,components,token_dim,hidden,fusion_dim,batch_size";

pub fn write_trials<W: Write>(out: &mut W, ranked: &[Trial]) -> Result<()> {
    writeln!(out, "{TRIALS_HEADER}")?;
    for (rank, t) in ranked.iter().enumerate() {
        let hidden: Vec<String> = t
            .network
            .target_hidden
            .iter()
            .map(|h| h.to_string())
            .collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            t.trial,
            t.validation_mse,
            t.network.optimizer.learning_rate,
            t.network.dropout,
            t.network.components,
            t.network.token_dim,
            hidden.join("x"),
            t.network.fusion_dim,
            t.batch_size
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_space() {
        let space = SearchSpace::default();
        let base = NetworkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (c, b) = space.sample(&base, &mut rng).unwrap();
            let lr = c.optimizer.learning_rate;
            assert!((3e-4..=1e-2).contains(&lr));
            assert!(space.dropout.contains(&c.dropout));
            assert!(space.components.contains(&c.components));
            assert!(space.hidden.contains(&c.target_hidden));
            assert_eq!(c.target_hidden, c.context_hidden);
            assert!(space.batch_size.contains(&b));
        }
    }

    #[test]
    fn empty_dimension_is_config_error() {
        let space = SearchSpace {
            components: vec![],
            ..SearchSpace::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            space.sample(&NetworkConfig::default(), &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ranking_is_ascending_with_nan_last() {
        let t = |i: usize, m: f64| Trial {
            trial: i,
            network: NetworkConfig::default(),
            batch_size: 32,
            validation_mse: m,
        };
        let mut v = vec![t(0, 0.5), t(1, f64::NAN), t(2, 0.1), t(3, 0.5)];
        rank_trials(&mut v);
        assert_eq!(
            v.iter().map(|t| t.trial).collect::<Vec<_>>(),
            vec![2, 0, 3, 1]
        );
    }
}
