//! Daily marketplace loop: traffic, selection, clicks, turnover.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::scenario::{draw_group, generate_scenario, ArmState, Lexicon, Scenario, TargetArm};
use crate::bandit::Branch;
use crate::dataset::{mix64, LogRecord};
use crate::error::{Error, Result};

const TRAFFIC_SALT: u64 = 0x7472_6166_6669_6300;
const POLICY_SALT: u64 = 0x706f_6c69_6379_0000;
const CLICK_SALT: u64 = 0x636c_6963_6b00_0000;

/// Aggregated outcome of one (target, publisher) pair on one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShownRecord {
    pub target_id: u64,
    pub publisher: usize,
    pub r: u64,
    pub clicks: u64,
    pub true_ctr: f64,
    pub revenue: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayLog {
    pub day: i64,
    /// Ordered by (target_id, publisher).
    pub records: Vec<ShownRecord>,
    pub impressions: u64,
    pub explore_impressions: u64,
    pub clicks: u64,
    pub revenue: f64,
    /// Targets whose lifetime impressions reached the throughput threshold today.
    pub new_targets: Vec<u64>,
    /// Distinct advertisers among `new_targets`.
    pub new_advertisers: usize,
    pub arrivals: Vec<u64>,
    pub retirements: Vec<u64>,
}

impl DayLog {
    /// Revenue per thousand impressions.
    pub fn rpm(&self) -> f64 {
        if self.impressions == 0 {
            0.0
        } else {
            1000.0 * self.revenue / self.impressions as f64
        }
    }
}

/// One impression opportunity.
pub struct Event<'a> {
    pub publisher: usize,
    /// Candidate arm indices (into [`Market::arms`]), possibly repeated.
    pub slate: &'a [usize],
    pub arms: &'a [TargetArm],
    /// Lifetime impressions per arm, updated in real time.
    pub lifetime: &'a [u64],
}

/// A selection strategy driven by the market.
pub trait Policy {
    /// Called before the day's traffic.
    fn prepare(&mut self, market: &Market) -> Result<()>;
    /// Picks an arm index from `event.slate`.
    fn choose(&mut self, event: &Event<'_>, rng: &mut ChaCha8Rng) -> Result<(usize, Branch)>;
    /// Called after clicks are drawn and turnover applied.
    fn observe(&mut self, market: &Market, log: &DayLog) -> Result<()>;
}

/// Market state: every arm ever created (index == target id), lifetime
/// counters and the live set.
#[derive(Clone, Debug)]
pub struct Market {
    pub scenario: Scenario,
    pub lexicon: Lexicon,
    pub arms: Vec<TargetArm>,
    pub lifetime: Vec<u64>,
    /// Lifetime clicks per arm, known after each day's end.
    pub lifetime_clicks: Vec<u64>,
    /// Indices of live arms, ascending.
    pub live: Vec<usize>,
    pub day: i64,
    run_seed: u64,
    share_cdf: Vec<f64>,
}

impl Market {
    pub fn new(scenario: Scenario, run_seed: u64) -> Result<Self> {
        let arms = generate_scenario(&scenario)?;
        let lexicon = Lexicon::new(&scenario);
        let n = arms.len();
        let mut acc = 0.0;
        let share_cdf = scenario
            .traffic_shares()
            .iter()
            .map(|s| {
                acc += s;
                acc
            })
            .collect();
        Ok(Self {
            lexicon,
            lifetime: vec![0; n],
            lifetime_clicks: vec![0; n],
            live: (0..n).collect(),
            arms,
            day: 0,
            run_seed,
            share_cdf,
            scenario,
        })
    }

    pub fn publishers(&self) -> usize {
        self.scenario.publishers.len()
    }

    fn rng(&self, salt: u64, key: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.run_seed ^ salt) ^ mix64(key))
    }

    fn draw_publisher(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.share_cdf
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.share_cdf.len() - 1)
    }

    /// Each publisher's candidate list for the day, drawn without
    /// replacement with the publisher's group affinities as weights, or
    /// `None` when slates come from the whole live set.
    fn candidate_lists(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<Vec<usize>>>> {
        let n = self.scenario.candidates_per_publisher;
        let uniform = self
            .scenario
            .publishers
            .iter()
            .all(|p| p.group_affinity.is_empty());
        if n == 0 || (uniform && n >= self.live.len()) {
            return Ok(None);
        }
        let mut lists = Vec::with_capacity(self.publishers());
        for p in &self.scenario.publishers {
            let weight = |k: usize| p.affinity(self.arms[self.live[k]].group);
            let mut list: Vec<usize> = rand::seq::index::sample_weighted(
                rng,
                self.live.len(),
                weight,
                n.min(self.live.len()),
            )
            .map_err(|e| Error::config(format!("publisher {:?} candidate weights: {e}", p.name)))?
            .into_iter()
            .map(|k| self.live[k])
            .collect();
            if list.is_empty() {
                list = self.live.clone();
            }
            list.sort_unstable();
            lists.push(list);
        }
        Ok(Some(lists))
    }

    /// Runs one day of traffic under `policy` and advances the market.
    pub fn run_day(&mut self, policy: &mut dyn Policy) -> Result<DayLog> {
        if self.live.is_empty() {
            return Err(Error::usage("no live targets left in the market"));
        }
        policy.prepare(self)?;
        let day = self.day;
        let pubs = self.publishers();
        let mut traffic = self.rng(TRAFFIC_SALT, day as u64);
        let mut choice_rng = self.rng(POLICY_SALT, day as u64);
        let threshold = self.scenario.throughput_threshold;

        let lists = self.candidate_lists(&mut traffic)?;
        let mut counts = vec![0u64; self.arms.len() * pubs];
        let mut slate = vec![0usize; self.scenario.slate_size];
        let mut log = DayLog {
            day,
            ..DayLog::default()
        };
        for _ in 0..self.scenario.impressions_per_day {
            let publisher = self.draw_publisher(&mut traffic);
            let list = lists.as_ref().map_or(&self.live, |l| &l[publisher]);
            for s in slate.iter_mut() {
                *s = list[traffic.random_range(0..list.len())];
            }
            let event = Event {
                publisher,
                slate: &slate,
                arms: &self.arms,
                lifetime: &self.lifetime,
            };
            let (arm, branch) = policy.choose(&event, &mut choice_rng)?;
            if !matches!(
                self.arms.get(arm).map(|a| a.state),
                Some(ArmState::Fresh | ArmState::Live)
            ) {
                return Err(Error::usage(format!(
                    "policy chose target {arm}, which is not live"
                )));
            }
            counts[arm * pubs + publisher] += 1;
            self.lifetime[arm] += 1;
            if self.lifetime[arm] == threshold {
                log.new_targets.push(arm as u64);
            }
            log.impressions += 1;
            if branch == Branch::Explore {
                log.explore_impressions += 1;
            }
        }

        for (idx, &r) in counts.iter().enumerate() {
            if r == 0 {
                continue;
            }
            let (arm, publisher) = (idx / pubs, idx % pubs);
            let a = &self.arms[arm];
            let p = a.true_ctr(&self.scenario, publisher, day);
            let mut rng = self.rng(CLICK_SALT, mix64(day as u64) ^ (idx as u64));
            let clicks = Binomial::new(r, p)
                .map_err(|e| Error::numeric(format!("click model for target {arm}: {e}")))?
                .sample(&mut rng);
            let revenue = clicks as f64 * a.cpc;
            log.clicks += clicks;
            log.revenue += revenue;
            self.lifetime_clicks[arm] += clicks;
            log.records.push(ShownRecord {
                target_id: arm as u64,
                publisher,
                r,
                clicks,
                true_ctr: p,
                revenue,
            });
        }
        let mut advertisers: Vec<usize> = log
            .new_targets
            .iter()
            .map(|t| self.arms[*t as usize].advertiser)
            .collect();
        advertisers.sort_unstable();
        advertisers.dedup();
        log.new_advertisers = advertisers.len();

        self.turnover(&mut log);
        self.day += 1;
        policy.observe(self, &log)?;
        Ok(log)
    }

    fn turnover(&mut self, log: &mut DayLog) {
        let day = self.day;
        for r in &log.records {
            let arm = &mut self.arms[r.target_id as usize];
            if arm.state == ArmState::Fresh {
                arm.state = ArmState::Live;
            }
        }
        let age_limit = self.scenario.retirement_age;
        let arms = &mut self.arms;
        self.live.retain(|&i| {
            let keep = day - arms[i].birth_day + 1 < age_limit;
            if !keep {
                arms[i].state = ArmState::Retired;
                log.retirements.push(i as u64);
            }
            keep
        });
        let mut rng = self.scenario.day_rng(day, 0);
        for _ in 0..self.scenario.arrivals_per_day {
            let id = self.arms.len() as u64;
            let group = draw_group(&self.scenario, &mut rng);
            self.arms.push(TargetArm::generate(
                &self.scenario,
                &self.lexicon,
                id,
                group,
                day + 1,
            ));
            self.lifetime.push(0);
            self.lifetime_clicks.push(0);
            self.live.push(id as usize);
            log.arrivals.push(id);
        }
    }

    /// Training rows for a day's outcome.
    pub fn log_records(&self, log: &DayLog) -> Vec<LogRecord> {
        log.records
            .iter()
            .map(|r| {
                let arm = &self.arms[r.target_id as usize];
                LogRecord {
                    target_id: r.target_id,
                    target: arm.features.clone(),
                    context: self.scenario.context(r.publisher),
                    day: log.day,
                    r: r.r,
                    clicks: r.clicks,
                    true_ctr: Some(r.true_ctr),
                    group: Some(arm.group),
                }
            })
            .collect()
    }
}

/// Always shows one target while it is live; otherwise the first slate entry.
pub struct FixedArm {
    pub target: usize,
}

impl Policy for FixedArm {
    fn prepare(&mut self, _market: &Market) -> Result<()> {
        Ok(())
    }

    fn choose(&mut self, event: &Event<'_>, _rng: &mut ChaCha8Rng) -> Result<(usize, Branch)> {
        let live = event
            .arms
            .get(self.target)
            .is_some_and(|a| a.state != ArmState::Retired);
        Ok((
            if live { self.target } else { event.slate[0] },
            Branch::Exploit,
        ))
    }

    fn observe(&mut self, _market: &Market, _log: &DayLog) -> Result<()> {
        Ok(())
    }
}

/// Uniformly random slate member.
pub struct UniformRandom;

impl Policy for UniformRandom {
    fn prepare(&mut self, _market: &Market) -> Result<()> {
        Ok(())
    }

    fn choose(&mut self, event: &Event<'_>, rng: &mut ChaCha8Rng) -> Result<(usize, Branch)> {
        Ok((
            event.slate[rng.random_range(0..event.slate.len())],
            Branch::Explore,
        ))
    }

    fn observe(&mut self, _market: &Market, _log: &DayLog) -> Result<()> {
        Ok(())
    }
}

/// Knows every true CTR: shows the slate member with the highest expected
/// revenue `p · cpc` for the publisher and day.
#[derive(Default)]
pub struct Oracle {
    value: Vec<f64>,
    pubs: usize,
}

impl Policy for Oracle {
    fn prepare(&mut self, market: &Market) -> Result<()> {
        self.pubs = market.publishers();
        self.value = vec![f64::NEG_INFINITY; market.arms.len() * self.pubs];
        for &i in &market.live {
            let a = &market.arms[i];
            for p in 0..self.pubs {
                self.value[i * self.pubs + p] = a.true_ctr(&market.scenario, p, market.day) * a.cpc;
            }
        }
        Ok(())
    }

    fn choose(&mut self, event: &Event<'_>, _rng: &mut ChaCha8Rng) -> Result<(usize, Branch)> {
        let mut best = event.slate[0];
        for &c in &event.slate[1..] {
            let (v, b) = (
                self.value[c * self.pubs + event.publisher],
                self.value[best * self.pubs + event.publisher],
            );
            if v > b || (v == b && c < best) {
                best = c;
            }
        }
        Ok((best, Branch::Exploit))
    }

    fn observe(&mut self, _market: &Market, _log: &DayLog) -> Result<()> {
        Ok(())
    }
}

/// Model-free logging policy: exploits the smoothed lifetime CTR times CPC
/// and explores uniformly among rarely shown slate members.
pub struct EmpiricalGreedy {
    pub epsilon: f64,
    pub explore_threshold: u64,
    /// Prior pseudo-counts of the CTR estimate `(clicks + a) / (imps + b)`.
    pub prior_clicks: f64,
    pub prior_impressions: f64,
    value: Vec<f64>,
}

impl EmpiricalGreedy {
    pub fn new(epsilon: f64, explore_threshold: u64) -> Self {
        Self {
            epsilon,
            explore_threshold,
            prior_clicks: 0.1,
            prior_impressions: 10.0,
            value: Vec::new(),
        }
    }
}

impl Policy for EmpiricalGreedy {
    fn prepare(&mut self, market: &Market) -> Result<()> {
        self.value = market
            .arms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (market.lifetime_clicks[i] as f64 + self.prior_clicks)
                    / (market.lifetime[i] as f64 + self.prior_impressions)
                    * a.cpc
            })
            .collect();
        Ok(())
    }

    fn choose(&mut self, event: &Event<'_>, rng: &mut ChaCha8Rng) -> Result<(usize, Branch)> {
        let coin: f64 = rng.random();
        if coin < self.epsilon {
            let pool: Vec<usize> = event
                .slate
                .iter()
                .copied()
                .filter(|c| event.lifetime[*c] < self.explore_threshold)
                .collect();
            if !pool.is_empty() {
                return Ok((pool[rng.random_range(0..pool.len())], Branch::Explore));
            }
        }
        let mut best = event.slate[0];
        for &c in &event.slate[1..] {
            if self.value[c] > self.value[best] || (self.value[c] == self.value[best] && c < best) {
                best = c;
            }
        }
        Ok((best, Branch::Exploit))
    }

    fn observe(&mut self, _market: &Market, _log: &DayLog) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::standard_scenario;

    fn small(seed: u64) -> Scenario {
        Scenario {
            initial_arms: 200,
            arrivals_per_day: 10,
            retirement_age: 10,
            impressions_per_day: 5000,
            slate_size: 10,
            candidates_per_publisher: 50,
            ..standard_scenario(seed)
        }
    }

    #[test]
    fn impressions_and_revenue_are_conserved() {
        let mut m = Market::new(small(1), 7).unwrap();
        let mut policy = UniformRandom;
        for _ in 0..5 {
            let log = m.run_day(&mut policy).unwrap();
            assert_eq!(log.records.iter().map(|r| r.r).sum::<u64>(), 5000);
            assert_eq!(log.impressions, 5000);
            let rev: f64 = log
                .records
                .iter()
                .map(|r| r.clicks as f64 * m.arms[r.target_id as usize].cpc)
                .sum();
            assert_eq!(rev, log.records.iter().map(|r| r.revenue).sum::<f64>());
            assert!(log.records.iter().all(|r| r.clicks <= r.r));
        }
    }

    #[test]
    fn fixed_arm_gets_everything() {
        let mut m = Market::new(small(2), 1).unwrap();
        let log = m.run_day(&mut FixedArm { target: 0 }).unwrap();
        assert_eq!(log.records.len(), m.publishers().min(log.records.len()));
        assert!(log.records.iter().all(|r| r.target_id == 0));
        assert_eq!(m.lifetime[0], 5000);
        assert_eq!(log.new_targets, vec![0]);
    }

    #[test]
    fn floor_ctr_yields_almost_no_clicks() {
        let mut sc = small(3);
        for p in &mut sc.publishers {
            p.baseline_ctr = 1e-12;
        }
        let mut m = Market::new(sc, 0).unwrap();
        for a in &mut m.arms {
            a.base_log_ctr = -1e3;
        }
        let log = m.run_day(&mut UniformRandom).unwrap();
        assert!(log.records.iter().all(|r| r.true_ctr == 1e-5));
        assert!(log.clicks < 5);
    }

    #[test]
    fn turnover_keeps_population_stable() {
        let mut m = Market::new(small(4), 0).unwrap();
        for _ in 0..25 {
            m.run_day(&mut UniformRandom).unwrap();
        }
        assert_eq!(m.live.len(), 100);
        assert!(m.live.iter().all(|i| m.arms[*i].state != ArmState::Retired));
        assert!(m.live.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn runs_are_reproducible() {
        let run = || {
            let mut m = Market::new(small(5), 11).unwrap();
            (0..3)
                .map(|_| m.run_day(&mut EmpiricalGreedy::new(0.2, 200)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn expected_clicks_of_fixed_slate_policy() {
        // Fix the shown target and publisher mix; total clicks over seeded
        // replications should match the binomial expectation Σ r·p.
        let sc = Scenario {
            impressions_per_day: 2000,
            ..small(6)
        };
        let reps = 200;
        let mut totals = Vec::with_capacity(reps);
        let mut expected = 0.0;
        for rep in 0..reps {
            let mut m = Market::new(sc.clone(), rep as u64).unwrap();
            let log = m.run_day(&mut FixedArm { target: 3 }).unwrap();
            let e: f64 = log.records.iter().map(|r| r.r as f64 * r.true_ctr).sum();
            expected += e;
            totals.push(log.clicks as f64 - e);
        }
        let n = reps as f64;
        let mean_dev = totals.iter().sum::<f64>() / n;
        let var = totals.iter().map(|d| (d - mean_dev).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(
            mean_dev.abs() < 3.0 * (var / n).sqrt(),
            "deviation {mean_dev}, expected {}",
            expected / n
        );
    }
}
