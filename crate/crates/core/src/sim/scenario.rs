//! Scenario description and the synthetic target population.
//!
//! Every random quantity is drawn from a generator seeded by the scenario
//! seed and the identity of the thing being drawn (token, arm, day), so the
//! population does not depend on the order in which it is generated.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{mix64, VocabSizes};
use crate::error::{Error, Result};
use crate::network::{ContextFeatures, TargetFeatures};

const TOKEN_SALT: u64 = 0x746f_6b65_6e00_0000;
const CENTER_SALT: u64 = 0x6365_6e74_6572_0000;
const ARM_SALT: u64 = 0x6172_6d00_0000_0000;
const ADVERTISER_SALT: u64 = 0x6164_7600_0000_0000;
const DAY_SALT: u64 = 0x6461_7900_0000_0000;
const ETA_SALT: u64 = 0x6574_6100_0000_0000;

/// A population of targets sharing a topic: its own title vocabulary, CTR
/// level, temporal volatility and advertisers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Relative share of new arrivals; 0 keeps the group out of the market.
    pub arrival_weight: f64,
    /// Mean of `base_log_ctr` over the group's targets.
    pub base_log_ctr_mean: f64,
    /// Spread of the per-target part of `base_log_ctr` not explained by tokens.
    pub idiosyncratic_std: f64,
    /// Spread of per-token CTR effects (centered over the group vocabulary).
    pub token_effect_std: f64,
    /// Day-to-day standard deviation of a target's log CTR.
    pub temporal_sigma: f64,
    /// Log-normal CPC parameters of the group's advertisers.
    pub cpc_log_mean: f64,
    pub cpc_log_std: f64,
    pub vocab_size: usize,
    pub advertisers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublisherSpec {
    pub name: String,
    pub baseline_ctr: f64,
    pub traffic_share: f64,
    /// Relative weight of each group in this publisher's candidate lists,
    /// indexed like `groups`. Empty means every group weighs 1.
    #[serde(default)]
    pub group_affinity: Vec<f64>,
}

impl PublisherSpec {
    pub fn affinity(&self, group: usize) -> f64 {
        self.group_affinity
            .get(group)
            .copied()
            .unwrap_or(if self.group_affinity.is_empty() {
                1.0
            } else {
                0.0
            })
    }
}

/// Full scenario configuration, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub initial_arms: usize,
    pub arrivals_per_day: usize,
    /// Targets retire once this many days old.
    pub retirement_age: i64,
    pub impressions_per_day: u64,
    pub slate_size: usize,
    /// Size of each publisher's daily candidate list, from which its slates
    /// are drawn. 0 draws slates from the whole live set.
    #[serde(default)]
    pub candidates_per_publisher: usize,
    pub title_len_min: usize,
    pub title_len_max: usize,
    /// Tokens shared by all groups, appended after the group vocabularies.
    pub shared_vocab: usize,
    /// Probability that a title token comes from the shared vocabulary.
    pub shared_token_prob: f64,
    pub content_dim: usize,
    /// Spread of group centers in the content space.
    pub content_center_std: f64,
    /// Spread of token vectors around their group center.
    pub content_token_std: f64,
    /// Lifetime impressions at which a target counts as discovered.
    pub throughput_threshold: u64,
    pub groups: Vec<GroupSpec>,
    pub publishers: Vec<PublisherSpec>,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::config("scenario has no groups"));
        }
        if self.publishers.is_empty() {
            return Err(Error::config("scenario has no publishers"));
        }
        if self.title_len_min == 0 || self.title_len_max < self.title_len_min {
            return Err(Error::config(
                "title length range must satisfy 1 <= min <= max",
            ));
        }
        if self.slate_size == 0 {
            return Err(Error::config("slate size must be positive"));
        }
        if self.retirement_age < 1 {
            return Err(Error::config("retirement age must be at least one day"));
        }
        if !(0.0..=1.0).contains(&self.shared_token_prob)
            || (self.shared_token_prob > 0.0 && self.shared_vocab == 0)
        {
            return Err(Error::config(
                "shared_token_prob needs a non-empty shared vocabulary and must lie in [0, 1]",
            ));
        }
        for g in &self.groups {
            let bad = |what: &str| Error::config(format!("group {:?}: {what}", g.name));
            if g.vocab_size == 0 || g.advertisers == 0 {
                return Err(bad("vocab_size and advertisers must be positive"));
            }
            if g.arrival_weight.is_nan() || g.arrival_weight < 0.0 {
                return Err(bad("arrival_weight must be >= 0"));
            }
            if !(g.idiosyncratic_std >= 0.0
                && g.token_effect_std >= 0.0
                && g.temporal_sigma >= 0.0
                && g.cpc_log_std >= 0.0)
            {
                return Err(bad("standard deviations must be >= 0"));
            }
        }
        if self.groups.iter().map(|g| g.arrival_weight).sum::<f64>() <= 0.0 {
            return Err(Error::config(
                "at least one group needs a positive arrival weight",
            ));
        }
        let mut sigmas: Vec<f64> = self.groups.iter().map(|g| g.temporal_sigma).collect();
        sigmas.sort_by(f64::total_cmp);
        sigmas.dedup();
        if sigmas.len() < 2 {
            return Err(Error::config(
                "at least two groups must differ in temporal_sigma",
            ));
        }
        for p in &self.publishers {
            if !(p.baseline_ctr > 0.0 && p.baseline_ctr < 1.0)
                || p.traffic_share.is_nan()
                || p.traffic_share <= 0.0
            {
                return Err(Error::config(format!(
                    "publisher {:?}: baseline_ctr must lie in (0, 1) and traffic_share be positive",
                    p.name
                )));
            }
            if !p.group_affinity.is_empty()
                && (p.group_affinity.len() != self.groups.len()
                    || p.group_affinity
                        .iter()
                        .any(|w| !(*w >= 0.0 && w.is_finite())))
            {
                return Err(Error::config(format!(
                    "publisher {:?}: group_affinity needs one finite non-negative weight per group",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn token_vocab(&self) -> usize {
        self.groups.iter().map(|g| g.vocab_size).sum::<usize>() + self.shared_vocab
    }

    pub fn advertiser_count(&self) -> usize {
        self.groups.iter().map(|g| g.advertisers).sum()
    }

    pub fn vocab_sizes(&self) -> VocabSizes {
        VocabSizes {
            token: self.token_vocab(),
            categorical: vec![self.advertiser_count()],
            context: vec![self.publishers.len()],
            content_dim: self.content_dim,
        }
    }

    pub fn context(&self, publisher: usize) -> ContextFeatures {
        ContextFeatures::categorical(vec![publisher])
    }

    /// Traffic shares normalized to sum to one.
    pub fn traffic_shares(&self) -> Vec<f64> {
        let total: f64 = self.publishers.iter().map(|p| p.traffic_share).sum();
        self.publishers
            .iter()
            .map(|p| p.traffic_share / total)
            .collect()
    }

    fn rng(&self, salt: u64, key: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.seed ^ salt) ^ mix64(key))
    }

    /// Per-day generator for arrivals and other strategy-independent events.
    pub fn day_rng(&self, day: i64, stream: u64) -> ChaCha8Rng {
        let mut rng = self.rng(DAY_SALT, day as u64);
        rng.set_stream(stream);
        rng
    }
}

/// Token-level structure shared by every arm of a scenario.
#[derive(Clone, Debug)]
pub struct Lexicon {
    /// First token id of each group's vocabulary.
    pub group_offset: Vec<usize>,
    pub shared_offset: usize,
    /// CTR effect of each token.
    pub effect: Vec<f64>,
    /// Content vector of each token.
    pub vector: Vec<Vec<f64>>,
    pub group_center: Vec<Vec<f64>>,
    /// First advertiser id of each group.
    pub advertiser_offset: Vec<usize>,
    pub advertiser_cpc: Vec<f64>,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

impl Lexicon {
    pub fn new(sc: &Scenario) -> Self {
        let mut group_offset = Vec::with_capacity(sc.groups.len());
        let mut advertiser_offset = Vec::with_capacity(sc.groups.len());
        let (mut tok, mut adv) = (0, 0);
        for g in &sc.groups {
            group_offset.push(tok);
            advertiser_offset.push(adv);
            tok += g.vocab_size;
            adv += g.advertisers;
        }
        let shared_offset = tok;

        let group_center: Vec<Vec<f64>> = (0..sc.groups.len())
            .map(|g| {
                let mut rng = sc.rng(CENTER_SALT, g as u64);
                let d = normal(sc.content_center_std);
                (0..sc.content_dim).map(|_| d.sample(&mut rng)).collect()
            })
            .collect();

        let total = sc.token_vocab();
        let mut effect = vec![0.0; total];
        let mut vector = vec![Vec::new(); total];
        let spans = sc
            .groups
            .iter()
            .enumerate()
            .map(|(g, spec)| {
                (
                    group_offset[g],
                    spec.vocab_size,
                    spec.token_effect_std,
                    Some(g),
                )
            })
            .chain(std::iter::once((shared_offset, sc.shared_vocab, 0.0, None)));
        for (start, len, std, group) in spans {
            for id in start..start + len {
                let mut rng = sc.rng(TOKEN_SALT, id as u64);
                effect[id] = normal(std).sample(&mut rng);
                let center = group.map(|g| group_center[g].as_slice());
                let d = normal(sc.content_token_std);
                vector[id] = (0..sc.content_dim)
                    .map(|k| center.map_or(0.0, |c| c[k]) + d.sample(&mut rng))
                    .collect();
            }
            // Center the effects so a group's mean CTR is exactly its configured mean.
            if len > 0 {
                let m = effect[start..start + len].iter().sum::<f64>() / len as f64;
                effect[start..start + len].iter_mut().for_each(|e| *e -= m);
            }
        }

        let mut advertiser_cpc = vec![0.0; sc.advertiser_count()];
        for (g, spec) in sc.groups.iter().enumerate() {
            for a in 0..spec.advertisers {
                let id = advertiser_offset[g] + a;
                let mut rng = sc.rng(ADVERTISER_SALT, id as u64);
                advertiser_cpc[id] =
                    (spec.cpc_log_mean + normal(spec.cpc_log_std).sample(&mut rng)).exp();
            }
        }
        Self {
            group_offset,
            shared_offset,
            effect,
            vector,
            group_center,
            advertiser_offset,
            advertiser_cpc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmState {
    /// Live but never shown.
    Fresh,
    Live,
    Retired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetArm {
    pub target_id: u64,
    pub features: TargetFeatures,
    pub group: usize,
    pub advertiser: usize,
    pub cpc: f64,
    pub base_log_ctr: f64,
    pub temporal_sigma: f64,
    pub birth_day: i64,
    pub state: ArmState,
}

impl TargetArm {
    /// Draws target `target_id` of `group`. The result depends only on the
    /// scenario, the group and the id.
    pub fn generate(
        sc: &Scenario,
        lex: &Lexicon,
        target_id: u64,
        group: usize,
        birth_day: i64,
    ) -> Self {
        let spec = &sc.groups[group];
        let mut rng = sc.rng(ARM_SALT, target_id);
        let len = rng.random_range(sc.title_len_min..=sc.title_len_max);
        let token_ids: Vec<usize> = (0..len)
            .map(|_| {
                if sc.shared_vocab > 0 && rng.random::<f64>() < sc.shared_token_prob {
                    lex.shared_offset + rng.random_range(0..sc.shared_vocab)
                } else {
                    lex.group_offset[group] + rng.random_range(0..spec.vocab_size)
                }
            })
            .collect();
        let n = token_ids.len() as f64;
        let mut content = vec![0.0; sc.content_dim];
        for t in &token_ids {
            content
                .iter_mut()
                .zip(&lex.vector[*t])
                .for_each(|(c, v)| *c += v);
        }
        content.iter_mut().for_each(|c| *c /= n);
        let token_effect = token_ids.iter().map(|t| lex.effect[*t]).sum::<f64>() / n;
        let base_log_ctr =
            spec.base_log_ctr_mean + token_effect + normal(spec.idiosyncratic_std).sample(&mut rng);
        let advertiser = lex.advertiser_offset[group] + rng.random_range(0..spec.advertisers);
        Self {
            target_id,
            features: TargetFeatures {
                token_ids,
                categorical_ids: vec![advertiser],
                content_reals: content,
            },
            group,
            advertiser,
            cpc: lex.advertiser_cpc[advertiser],
            base_log_ctr,
            temporal_sigma: spec.temporal_sigma,
            birth_day,
            state: ArmState::Fresh,
        }
    }

    /// Day-level deviation of the log CTR, reproducible from (scenario, id, day).
    pub fn eta(&self, sc: &Scenario, day: i64) -> f64 {
        if self.temporal_sigma == 0.0 {
            return 0.0;
        }
        let mut rng = sc.rng(ETA_SALT, mix64(self.target_id) ^ day as u64);
        normal(self.temporal_sigma).sample(&mut rng)
    }

    /// True click probability in front of `publisher` on `day`.
    pub fn true_ctr(&self, sc: &Scenario, publisher: usize, day: i64) -> f64 {
        let p =
            sc.publishers[publisher].baseline_ctr * (self.base_log_ctr + self.eta(sc, day)).exp();
        p.clamp(1e-5, 0.5)
    }
}

/// Picks a group index in proportion to arrival weights.
pub fn draw_group<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> usize {
    let total: f64 = sc.groups.iter().map(|g| g.arrival_weight).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, g) in sc.groups.iter().enumerate() {
        if g.arrival_weight > 0.0 {
            if u < g.arrival_weight {
                return i;
            }
            u -= g.arrival_weight;
        }
    }
    sc.groups
        .iter()
        .rposition(|g| g.arrival_weight > 0.0)
        .expect("validated")
}

/// Initial population: `initial_arms` live targets with birth days spread
/// over the retirement window so retirements are staggered.
pub fn generate_scenario(sc: &Scenario) -> Result<Vec<TargetArm>> {
    sc.validate()?;
    let lex = Lexicon::new(sc);
    let mut rng = sc.day_rng(i64::MIN, 0);
    Ok((0..sc.initial_arms as u64)
        .map(|id| {
            let group = draw_group(sc, &mut rng);
            let birth = -rng.random_range(0..sc.retirement_age);
            TargetArm::generate(sc, &lex, id, group, birth)
        })
        .collect())
}

/// The scenario used by the acceptance checks and as the CLI default.
///
/// Publishers receive very unequal traffic so impression counts per record
/// span several orders of magnitude. Groups differ in size, CTR level and
/// volatility; the last group never arrives and serves as an unexplored
/// cluster for analyses.
pub fn standard_scenario(seed: u64) -> Scenario {
    let group =
        |name: &str, w: f64, mean: f64, idio: f64, tok: f64, temporal: f64, cpc: f64| GroupSpec {
            name: name.to_string(),
            arrival_weight: w,
            base_log_ctr_mean: mean,
            idiosyncratic_std: idio,
            token_effect_std: tok,
            temporal_sigma: temporal,
            cpc_log_mean: cpc,
            cpc_log_std: 0.3,
            vocab_size: 120,
            advertisers: 12,
        };
    let publisher = |name: &str, baseline: f64, share: f64, affinity: &[f64]| PublisherSpec {
        name: name.to_string(),
        baseline_ctr: baseline,
        traffic_share: share,
        group_affinity: affinity.to_vec(),
    };
    Scenario {
        seed,
        initial_arms: 2000,
        arrivals_per_day: 50,
        retirement_age: 40,
        impressions_per_day: 100_000,
        slate_size: 50,
        candidates_per_publisher: 150,
        title_len_min: 4,
        title_len_max: 8,
        shared_vocab: 64,
        shared_token_prob: 0.25,
        content_dim: 8,
        content_center_std: 1.0,
        content_token_std: 0.5,
        throughput_threshold: 500,
        groups: vec![
            group("news", 0.40, 0.0, 0.15, 0.6, 0.10, -0.2),
            group("shopping", 0.25, -0.2, 0.25, 0.8, 0.45, 0.3),
            group("sports", 0.18, 0.2, 0.10, 0.5, 0.05, -0.1),
            group("finance", 0.10, -0.4, 0.20, 0.7, 0.25, 0.6),
            group("travel", 0.07, 0.1, 0.20, 0.6, 0.30, 0.2),
            group("automotive", 0.0, -0.1, 0.20, 0.7, 0.20, 0.5),
        ],
        publishers: vec![
            // Affinity order: news, shopping, sports, finance, travel, automotive.
            publisher("portal", 0.040, 0.45, &[]),
            publisher("sportsdaily", 0.050, 0.20, &[0.3, 0.1, 3.0, 0.1, 0.3, 0.5]),
            publisher("lifestyle", 0.035, 0.20, &[0.3, 3.0, 0.2, 0.2, 2.0, 0.5]),
            publisher("markets", 0.030, 0.15, &[1.5, 0.2, 0.1, 3.0, 0.2, 0.5]),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_population() {
        let sc = standard_scenario(3);
        assert_eq!(
            generate_scenario(&sc).unwrap(),
            generate_scenario(&sc).unwrap()
        );
        let other = generate_scenario(&standard_scenario(4)).unwrap();
        assert_ne!(generate_scenario(&sc).unwrap(), other);
    }

    #[test]
    fn zero_groups_is_config_error() {
        let mut sc = standard_scenario(0);
        sc.groups.clear();
        assert!(matches!(generate_scenario(&sc), Err(Error::Config(_))));
    }

    #[test]
    fn groups_need_distinct_volatility() {
        let mut sc = standard_scenario(0);
        for g in &mut sc.groups {
            g.temporal_sigma = 0.2;
        }
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn static_group_has_constant_ctr() {
        let mut sc = standard_scenario(1);
        sc.groups[2].temporal_sigma = 0.0;
        let arms = generate_scenario(&sc).unwrap();
        let arm = arms.iter().find(|a| a.group == 2).unwrap();
        let p0 = arm.true_ctr(&sc, 0, 0);
        for day in 1..30 {
            assert_eq!(arm.true_ctr(&sc, 0, day), p0);
        }
        let volatile = arms.iter().find(|a| a.group == 1).unwrap();
        assert_ne!(volatile.true_ctr(&sc, 0, 0), volatile.true_ctr(&sc, 0, 1));
        assert_eq!(volatile.true_ctr(&sc, 0, 5), volatile.true_ctr(&sc, 0, 5));
    }

    #[test]
    fn base_log_ctr_mean_per_group() {
        let sc = standard_scenario(2);
        let lex = Lexicon::new(&sc);
        for (g, spec) in sc.groups.iter().enumerate() {
            let n = 10_000;
            let xs: Vec<f64> = (0..n)
                .map(|i| TargetArm::generate(&sc, &lex, 1_000_000 + i, g, 0).base_log_ctr)
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            // Token effects are centered over the group vocabulary, but the
            // shared tokens also contribute; their effects are zero.
            assert!(
                (m - spec.base_log_ctr_mean).abs() < 3.0 * se,
                "{}: {m} vs {}",
                spec.name,
                spec.base_log_ctr_mean
            );
        }
    }

    #[test]
    fn titles_use_group_vocabulary() {
        let sc = standard_scenario(5);
        let lex = Lexicon::new(&sc);
        let arm = TargetArm::generate(&sc, &lex, 7, 3, 0);
        for t in &arm.features.token_ids {
            let in_group =
                (lex.group_offset[3]..lex.group_offset[3] + sc.groups[3].vocab_size).contains(t);
            assert!(in_group || *t >= lex.shared_offset);
        }
        assert!(arm
            .features
            .validate(sc.token_vocab(), &[sc.advertiser_count()])
            .is_ok());
        assert_eq!(arm.cpc, lex.advertiser_cpc[arm.advertiser]);
    }

    #[test]
    fn toml_round_trip() {
        let sc = standard_scenario(9);
        let text = sc.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);
        assert!(matches!(
            Scenario::from_toml_str("seed = 1"),
            Err(Error::Config(_))
        ));
    }
}
