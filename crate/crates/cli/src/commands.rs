//! Subcommand implementations. Each reads a [`RunConfig`], writes its
//! outputs (and the config) into the output directory and logs to stderr.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ddn_core::bandit::StrategyConfig;
use ddn_core::dataset::{read_dataset, write_dataset, DatasetManifest, Sample};
use ddn_core::eval::figures::{
    data_std_curve, injection, model_std_curve, noise_pool_comparison, write_curves,
    write_injections, write_noise_pools, AnalysisPool, Curve, InjectionResult, NoisePoolResult,
};
use ddn_core::eval::{empirical_mse, mse_eval};
use ddn_core::network::{read_header, Calibration, DdnNetwork, LossKind, NetworkConfig};
use ddn_core::search::{rank_trials, run_trial, write_trials};
use ddn_core::sim::{
    run_experiment, standard_scenario, write_metrics, MetricRow, Scenario, StrategySpec,
};
use ddn_core::{Error, Result};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::parallel::map_indexed;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_scenario(cfg: &RunConfig, seed: u64) -> Result<Scenario> {
    match &cfg.scenario {
        Some(path) => {
            if !path.exists() {
                return Err(Error::config(format!(
                    "scenario file {} does not exist",
                    path.display()
                )));
            }
            Scenario::load(path)
        }
        None => {
            info!("no scenario given; using the standard scenario with seed {seed}");
            Ok(standard_scenario(seed))
        }
    }
}

fn dataset_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::config(format!("{} needs --dataset", cfg.command)))?;
    if !dir.join(TRAIN_FILE).exists() {
        return Err(Error::data(format!(
            "no dataset at {} (missing {TRAIN_FILE})",
            dir.display()
        )));
    }
    Ok(dir)
}

struct Dataset {
    train: Vec<Sample>,
    validation: Vec<Sample>,
    manifest: DatasetManifest,
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (train, manifest) = read_dataset(&dir.join(TRAIN_FILE))?;
    let validation = if dir.join(VALIDATION_FILE).exists() {
        read_dataset(&dir.join(VALIDATION_FILE))?.0
    } else {
        Vec::new()
    };
    info!(
        "dataset {}: {} train / {} validation samples",
        dir.display(),
        train.len(),
        validation.len()
    );
    Ok(Dataset {
        train,
        validation,
        manifest,
    })
}

pub fn gen_scenario(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.single_seed()?;
    let dir = cfg.prepare_output()?;
    let path = dir.join(SCENARIO_FILE);
    std::fs::write(&path, standard_scenario(seed).to_toml_string()?)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn build_dataset(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.single_seed()?;
    let sc = load_scenario(cfg, seed)?;
    sc.validate()?;
    let dir = cfg.prepare_output()?;
    let pool = AnalysisPool::simulate(&sc, &cfg.analysis, seed)?;
    let vocab = sc.vocab_sizes();
    write_dataset(&dir.join(TRAIN_FILE), &pool.train, &vocab, Some(seed))?;
    write_dataset(
        &dir.join(VALIDATION_FILE),
        &pool.validation,
        &vocab,
        Some(seed),
    )?;
    std::fs::write(dir.join(SCENARIO_FILE), sc.to_toml_string()?)?;
    info!(
        "wrote {} train and {} validation samples to {}",
        pool.train.len(),
        pool.validation.len(),
        dir.display()
    );
    Ok(())
}

/// Clean-label MSE when ground truth is known for every sample, else the
/// MSE against empirical labels; `None` for an empty set.
fn validation_mse(net: &DdnNetwork, samples: &[Sample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    if samples.iter().all(|s| s.true_ctr.is_some()) {
        mse_eval(net, samples).map(Some)
    } else {
        empirical_mse(net, samples).map(Some)
    }
}

fn all_samples(ds: &Dataset) -> Vec<Sample> {
    ds.train.iter().chain(&ds.validation).cloned().collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.single_seed()?;
    let ds = load_dataset(dataset_dir(cfg)?)?;
    let network = NetworkConfig {
        seed,
        ..cfg.train.network.clone().with_vocab(&ds.manifest.vocab)
    };
    let mut net = DdnNetwork::new(network)?;
    net.set_calibration(Calibration::from_samples(&all_samples(&ds)));
    net.set_objective(cfg.train.kind);
    let dir = cfg.prepare_output()?;

    let mut curve = create(&dir.join("loss_curve.csv"))?;
    writeln!(curve, "epoch,train_loss,validation_mse")?;
    for epoch in 1..=cfg.train.epochs {
        let loss = net.fit_epochs(&ds.train, cfg.train.kind, 1, cfg.train.batch_size)?[0];
        let mse = validation_mse(&net, &ds.validation)?;
        info!("epoch {epoch}: {} loss {loss:.5}", cfg.train.kind);
        match mse {
            Some(m) => writeln!(curve, "{epoch},{loss},{m}")?,
            None => writeln!(curve, "{epoch},{loss},")?,
        }
    }
    curve.flush()?;
    let path = dir.join(CHECKPOINT_FILE);
    net.save(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct CurveSummary {
    model_kind: String,
    rho: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct ReportSummary {
    fig3: Vec<CurveSummary>,
    fig5: Vec<CurveSummary>,
    fig6: Vec<InjectionSummary>,
    table2: Vec<NoisePoolResult>,
}

#[derive(Serialize)]
struct InjectionSummary {
    model_kind: String,
    mean_model_std_before: f64,
    mean_model_std_after: f64,
}

fn summarize(curves: &[Curve]) -> Vec<CurveSummary> {
    curves
        .iter()
        .map(|c| CurveSummary {
            model_kind: c.model_kind.clone(),
            rho: c.rho,
            p_value: c.p_value,
        })
        .collect()
}

/// Loads a checkpoint and checks it against the dataset's vocabulary.
fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<(DdnNetwork, LossKind)> {
    let header = read_header(path)?;
    let expected = header.config.clone().with_vocab(&ds.manifest.vocab);
    let net = DdnNetwork::load(path, Some(&expected))?;
    let kind = net.objective().ok_or_else(|| {
        Error::config(format!(
            "checkpoint {} does not record its training objective",
            path.display()
        ))
    })?;
    Ok((net, kind))
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.single_seed()?;
    let data_dir = dataset_dir(cfg)?;
    if cfg.checkpoints.is_empty() {
        return Err(Error::config("report needs at least one --checkpoint"));
    }
    let ds = load_dataset(data_dir)?;
    let models = cfg
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p, &ds))
        .collect::<Result<Vec<_>>>()?;
    let scenario_path = cfg.scenario.clone().or_else(|| {
        let p = data_dir.join(SCENARIO_FILE);
        p.exists().then_some(p)
    });
    let scenario = scenario_path.as_deref().map(Scenario::load).transpose()?;
    let dir = cfg.prepare_output()?;

    let pool = AnalysisPool::from_samples(ds.train, ds.validation, models[0].0.config().clone());
    let mut fig3 = Vec::new();
    let mut fig5 = Vec::new();
    let mut fig6: Vec<(LossKind, InjectionResult)> = Vec::new();
    for (net, kind) in &models {
        info!("analyzing {kind} checkpoint");
        fig3.push(data_std_curve(net, *kind, &pool, &cfg.analysis, seed)?);
        fig5.push(model_std_curve(net, *kind, &pool, &cfg.analysis, seed)?);
        if let Some(sc) = &scenario {
            fig6.push((
                *kind,
                injection(net, *kind, sc, &pool, &cfg.analysis, seed)?,
            ));
        }
    }
    let (hi, lo) = (cfg.analysis.high_noise_max_r, cfg.analysis.low_noise_min_r);
    let mut table2 = Vec::new();
    for result in [
        noise_pool_comparison(&pool, "high_noise", |r| r < hi, &cfg.analysis, seed),
        noise_pool_comparison(&pool, "low_noise", |r| r >= lo, &cfg.analysis, seed),
    ] {
        match result {
            Ok(r) => table2.push(r),
            Err(Error::Data(m)) => warn!("skipping noise-pool comparison: {m}"),
            Err(e) => return Err(e),
        }
    }

    let mut out = create(&dir.join("fig3.csv"))?;
    write_curves(&mut out, &fig3)?;
    out.flush()?;
    let mut out = create(&dir.join("fig5.csv"))?;
    write_curves(&mut out, &fig5)?;
    out.flush()?;
    let mut out = create(&dir.join("fig6.csv"))?;
    writeln!(
        out,
        "model_kind,{}",
        ddn_core::eval::figures::INJECTION_HEADER
    )?;
    for (kind, r) in &fig6 {
        let mut rows = Vec::new();
        write_injections(&mut rows, std::slice::from_ref(r))?;
        for line in String::from_utf8_lossy(&rows).lines().skip(1) {
            writeln!(out, "{kind},{line}")?;
        }
    }
    out.flush()?;
    let mut out = create(&dir.join("table2.csv"))?;
    write_noise_pools(&mut out, &table2)?;
    out.flush()?;
    write_json(
        &dir.join("report_summary.json"),
        &ReportSummary {
            fig3: summarize(&fig3),
            fig5: summarize(&fig5),
            fig6: fig6
                .iter()
                .map(|(k, r)| InjectionSummary {
                    model_kind: k.to_string(),
                    mean_model_std_before: r.mean_before(),
                    mean_model_std_after: r.mean_after(),
                })
                .collect(),
            table2,
        },
    )?;
    info!("wrote report to {}", dir.display());
    Ok(())
}

/// One arm of a closed-loop experiment.
#[derive(Clone, Debug)]
struct Arm {
    label: String,
    kind: Option<LossKind>,
    a: Option<f64>,
    spec: StrategySpec,
}

fn experiment_arms(cfg: &RunConfig) -> Result<Vec<Arm>> {
    let sim = &cfg.simulate;
    if sim.kinds.is_empty() {
        return Err(Error::config("simulate needs at least one entry in kinds"));
    }
    let mut arms = Vec::new();
    for name in &sim.kinds {
        let baseline = match name.to_ascii_lowercase().as_str() {
            "oracle" => Some(StrategySpec::Oracle),
            "random" => Some(StrategySpec::Random),
            "empirical" => Some(StrategySpec::EmpiricalGreedy {
                epsilon: sim.strategy.epsilon,
                explore_threshold: sim.strategy.explore_impression_threshold,
            }),
            _ => None,
        };
        if let Some(spec) = baseline {
            arms.push(Arm {
                label: spec.label(),
                kind: None,
                a: None,
                spec,
            });
            continue;
        }
        let kind: LossKind = name.parse()?;
        if sim.a_values.is_empty() {
            arms.push(Arm {
                label: kind.to_string(),
                kind: Some(kind),
                a: Some(sim.strategy.a),
                spec: StrategySpec::Model {
                    kind,
                    strategy: sim.strategy.clone(),
                },
            });
        } else {
            for &a in &sim.a_values {
                arms.push(Arm {
                    label: format!("{kind}@a={a}"),
                    kind: Some(kind),
                    a: Some(a),
                    spec: StrategySpec::Model {
                        kind,
                        strategy: StrategyConfig {
                            a,
                            ..sim.strategy.clone()
                        },
                    },
                });
            }
        }
    }
    Ok(arms)
}

fn mean_of(rows: &[MetricRow], metric: &str, from_day: i64) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.metric == metric && r.day >= from_day)
        .map(|r| r.value)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let arms = experiment_arms(cfg)?;
    let scenarios = cfg
        .seeds
        .iter()
        .map(|s| {
            let sc = load_scenario(cfg, *s)?;
            sc.validate()?;
            Ok(sc)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.prepare_output()?;
    let n_seeds = cfg.seeds.len();
    let runs = map_indexed(arms.len() * n_seeds, cfg.jobs, |i| {
        let (arm, k) = (&arms[i / n_seeds], i % n_seeds);
        let seed = cfg.seeds[k];
        info!("running {} with seed {seed}", arm.label);
        let run = run_experiment(
            &scenarios[k],
            &arm.spec,
            &arm.label,
            &cfg.simulate.experiment,
            seed,
        )?;
        Ok(run.metrics)
    })?;

    let mut out = create(&dir.join("metrics.csv"))?;
    for (i, rows) in runs.iter().enumerate() {
        write_metrics(&mut out, rows, i == 0)?;
    }
    if runs.is_empty() {
        write_metrics(&mut out, &[], true)?;
    }
    out.flush()?;

    let from = cfg.simulate.summary_from_day;
    if cfg.simulate.experiment.days <= from {
        warn!(
            "runs end before day {from}; summary.csv and table4.csv will have empty metric columns"
        );
    }
    let mut out = create(&dir.join("summary.csv"))?;
    writeln!(
        out,
        "model_kind,seed,rpm,target_throughput,advertiser_throughput,validation_mse"
    )?;
    for (i, rows) in runs.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            arms[i / n_seeds].label,
            cfg.seeds[i % n_seeds],
            fmt_opt(mean_of(rows, "rpm", from)),
            fmt_opt(mean_of(rows, "target_throughput", from)),
            fmt_opt(mean_of(rows, "advertiser_throughput", from)),
            fmt_opt(mean_of(rows, "validation_mse", from)),
        )?;
    }
    out.flush()?;

    if !cfg.simulate.a_values.is_empty() {
        write_table4(&dir.join("table4.csv"), &arms, &runs, cfg)?;
    }
    info!("wrote {} experiment runs to {}", runs.len(), dir.display());
    Ok(())
}

/// Per (kind, seed): metric means for every swept `a` and their relative
/// change (in percent) from the first `a` of the sweep.
fn write_table4(path: &Path, arms: &[Arm], runs: &[Vec<MetricRow>], cfg: &RunConfig) -> Result<()> {
    let n_seeds = cfg.seeds.len();
    let from = cfg.simulate.summary_from_day;
    let metrics = ["rpm", "target_throughput", "advertiser_throughput"];
    let mut out = create(path)?;
    writeln!(
        out,
        "model_kind,a,seed,rpm,target_throughput,advertiser_throughput,rpm_lift_pct,target_throughput_lift_pct,advertiser_throughput_lift_pct"
    )?;
    for (ai, arm) in arms.iter().enumerate() {
        let (Some(kind), Some(a)) = (arm.kind, arm.a) else {
            continue;
        };
        let first = arms
            .iter()
            .position(|x| x.kind == Some(kind))
            .expect("the arm itself matches");
        for k in 0..n_seeds {
            let here: Vec<Option<f64>> = metrics
                .iter()
                .map(|m| mean_of(&runs[ai * n_seeds + k], m, from))
                .collect();
            let base: Vec<Option<f64>> = metrics
                .iter()
                .map(|m| mean_of(&runs[first * n_seeds + k], m, from))
                .collect();
            let lifts: Vec<String> = here
                .iter()
                .zip(&base)
                .map(|(h, b)| match (h, b) {
                    (Some(h), Some(b)) if *b != 0.0 => (100.0 * (h - b) / b).to_string(),
                    _ => String::new(),
                })
                .collect();
            writeln!(
                out,
                "{kind},{a},{},{},{},{},{}",
                cfg.seeds[k],
                fmt_opt(here[0]),
                fmt_opt(here[1]),
                fmt_opt(here[2]),
                lifts.join(",")
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn search(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.single_seed()?;
    if cfg.search.trials == 0 {
        return Err(Error::config("search needs at least one trial"));
    }
    cfg.search.space.validate()?;
    let ds = load_dataset(dataset_dir(cfg)?)?;
    if ds.validation.is_empty() {
        return Err(Error::data("search needs a non-empty validation split"));
    }
    let base = cfg.train.network.clone().with_vocab(&ds.manifest.vocab);
    let calibration = Calibration::from_samples(&all_samples(&ds));
    let dir = cfg.prepare_output()?;
    let trial_dir = dir.join("trials");
    std::fs::create_dir_all(&trial_dir)?;
    let mut trials = map_indexed(cfg.search.trials, cfg.jobs, |i| {
        run_trial(
            i,
            &base,
            &cfg.search,
            &ds.train,
            &ds.validation,
            &calibration,
            seed,
        )
    })?;
    for t in &trials {
        write_json(&trial_dir.join(format!("trial-{:04}.json", t.trial)), t)?;
    }
    rank_trials(&mut trials);
    let mut out = create(&dir.join("trials.csv"))?;
    write_trials(&mut out, &trials)?;
    out.flush()?;
    write_json(&dir.join("best_trial.json"), &trials[0])?;
    info!(
        "best of {} trials: #{} with validation MSE {}",
        trials.len(),
        trials[0].trial,
        trials[0].validation_mse
    );
    Ok(())
}

pub fn inspect_checkpoint(cfg: &RunConfig, write_files: bool) -> Result<()> {
    let path: &PathBuf = cfg
        .checkpoints
        .first()
        .ok_or_else(|| Error::config("inspect-checkpoint needs a checkpoint path"))?;
    let header = read_header(path)?;
    let net = DdnNetwork::load(path, None)?;
    let c = &header.config;
    let mut text = String::new();
    let _ = writeln!(text, "checkpoint  {}", path.display());
    let _ = writeln!(text, "format      v{}", header.version);
    let _ = writeln!(
        text,
        "objective   {}",
        header
            .objective
            .map_or_else(|| "unknown".to_string(), |k| k.to_string())
    );
    let _ = writeln!(
        text,
        "parameters  {} tensors, {} scalars",
        header.params.len(),
        header.num_scalars()
    );
    let _ = writeln!(
        text,
        "network     tokens {} x {}, target {:?}, context {:?}, fusion {} ({:?}), K {}, dropout {}",
        c.token_vocab,
        c.token_dim,
        c.target_hidden,
        c.context_hidden,
        c.fusion_dim,
        c.fusion,
        c.components,
        c.dropout
    );
    for (ctx, b) in &header.calibration.per_context {
        let _ = writeln!(text, "baseline    context {ctx:?}: {b}");
    }
    for p in net.params().iter() {
        let v = p.values();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let _ = writeln!(text, "  {:<24} {:?} |w| = {norm:.6}", p.name(), p.shape());
    }
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
    {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        r => r?,
    }
    if write_files {
        let dir = cfg.prepare_output()?;
        write_json(&dir.join("checkpoint_header.json"), &header)?;
    }
    Ok(())
}
