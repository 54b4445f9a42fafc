//! Closed-loop runs on a small market.

use std::collections::BTreeSet;

use ddn_core::bandit::StrategyConfig;
use ddn_core::network::LossKind;
use ddn_core::sim::{
    closed_loop_network, run_experiment, standard_scenario, write_metrics, ExperimentConfig,
    Scenario, StrategySpec, TrainingSchedule, METRICS_HEADER,
};
use ddn_core::Error;

fn small_scenario(seed: u64) -> Scenario {
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

fn short(days: i64) -> ExperimentConfig {
    ExperimentConfig {
        days,
        network: closed_loop_network(),
        schedule: TrainingSchedule {
            warmup_days: 2,
            initial_steps: 100,
            retrain_every: 2,
            retrain_steps: 30,
            ..TrainingSchedule::default()
        },
    }
}

fn model(kind: LossKind) -> StrategySpec {
    StrategySpec::Model {
        kind,
        strategy: StrategyConfig::default(),
    }
}

fn mean(run: &ddn_core::sim::ExperimentRun, metric: &str) -> f64 {
    let v: Vec<f64> = run
        .metrics
        .iter()
        .filter(|m| m.metric == metric)
        .map(|m| m.value)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn model_runs_are_reproducible() {
    let sc = small_scenario(1);
    let a = run_experiment(&sc, &model(LossKind::Ddn), "DDN", &short(5), 9).unwrap();
    let b = run_experiment(&sc, &model(LossKind::Ddn), "DDN", &short(5), 9).unwrap();
    assert_eq!(a.metrics, b.metrics);
    let c = run_experiment(&sc, &model(LossKind::Ddn), "DDN", &short(5), 10).unwrap();
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn every_day_reports_the_core_metrics() {
    let sc = small_scenario(2);
    let run = run_experiment(&sc, &model(LossKind::Mdn), "MDN", &short(4), 0).unwrap();
    for day in 0..4 {
        let names: BTreeSet<&str> = run
            .metrics
            .iter()
            .filter(|m| m.day == day)
            .map(|m| m.metric.as_str())
            .collect();
        for metric in ["rpm", "target_throughput", "advertiser_throughput"] {
            assert!(names.contains(metric), "day {day} lacks {metric}");
        }
    }
    // Validation error only exists once a model has been trained.
    assert!(run
        .metrics
        .iter()
        .any(|m| m.metric == "validation_mse" && m.day >= 2));
    assert!(!run
        .metrics
        .iter()
        .any(|m| m.metric == "validation_mse" && m.day < 2));
    assert!(run
        .metrics
        .iter()
        .all(|m| m.model_kind == "MDN" && m.value.is_finite()));
}

#[test]
fn zero_days_is_empty_and_negative_is_rejected() {
    let sc = small_scenario(3);
    let run = run_experiment(&sc, &StrategySpec::Random, "random", &short(0), 0).unwrap();
    assert!(run.metrics.is_empty());
    let mut out = Vec::new();
    write_metrics(&mut out, &run.metrics, true).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().trim_end(), METRICS_HEADER);
    assert!(matches!(
        run_experiment(&sc, &StrategySpec::Random, "random", &short(-1), 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn oracle_earns_more_than_random() {
    let sc = small_scenario(4);
    let oracle = run_experiment(&sc, &StrategySpec::Oracle, "oracle", &short(5), 4).unwrap();
    let random = run_experiment(&sc, &StrategySpec::Random, "random", &short(5), 4).unwrap();
    assert!(mean(&oracle, "rpm") > 1.5 * mean(&random, "rpm"));
}

#[test]
fn trained_model_beats_random_traffic() {
    let sc = small_scenario(5);
    let ddn = run_experiment(&sc, &model(LossKind::Ddn), "DDN", &short(8), 5).unwrap();
    let random = run_experiment(&sc, &StrategySpec::Random, "random", &short(8), 5).unwrap();
    let late = |run: &ddn_core::sim::ExperimentRun| {
        let v: Vec<f64> = run
            .metrics
            .iter()
            .filter(|m| m.metric == "rpm" && m.day >= 4)
            .map(|m| m.value)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(
        late(&ddn) > late(&random),
        "{} vs {}",
        late(&ddn),
        late(&random)
    );
}
