//! Synthetic recommendation marketplace with a model-in-the-loop feedback cycle.

pub mod experiment;
pub mod market;
pub mod scenario;

pub use experiment::{
    closed_loop_network, make_policy, run_experiment, samples_from_logs, simulate_logs,
    write_metrics, ExperimentConfig, ExperimentRun, MetricRow, ModelPolicy, StrategySpec,
    TrainingSchedule, METRICS_HEADER,
};
pub use market::{
    DayLog, EmpiricalGreedy, Event, FixedArm, Market, Oracle, Policy, ShownRecord, UniformRandom,
};
pub use scenario::{
    generate_scenario, standard_scenario, ArmState, GroupSpec, Lexicon, PublisherSpec, Scenario,
    TargetArm,
};
