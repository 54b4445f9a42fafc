//! Training-pool construction, persistence and target-level splitting.
//!
//! Files are JSON Lines: one [`Sample`] object per line, fields exactly as
//! the struct below. A `<file>.manifest.json` written next to it records the
//! schema version, record count, vocabulary sizes and day range; readers
//! refuse files whose contents disagree with their manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ContextFeatures, TargetFeatures};
use crate::noise::{self, ImpressionRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// One aggregated (target, context, day) observation with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub target_id: u64,
    pub target: TargetFeatures,
    pub context: ContextFeatures,
    pub r: u64,
    pub clicks: u64,
    /// Log-calibrated CTR label, `empirical_log_ctr((r, clicks), calibration_baseline)`.
    pub y: f64,
    pub calibration_baseline: f64,
    pub day: i64,
    /// Ground-truth click probability when the record comes from the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_ctr: Option<f64>,
    /// Simulator group index, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

impl Sample {
    pub fn record(&self) -> Result<ImpressionRecord> {
        ImpressionRecord::new(self.r, self.clicks)
    }

    /// Recomputes the label from `(r, clicks, calibration_baseline)`.
    pub fn recompute_label(&self) -> Result<f64> {
        noise::empirical_log_ctr(self.record()?, self.calibration_baseline)
    }

    /// Noise-free label `ln(true_ctr / baseline)`, when ground truth is known.
    pub fn clean_label(&self) -> Option<f64> {
        self.true_ctr.map(|p| (p / self.calibration_baseline).ln())
    }
}

/// Raw log row before labeling: impressions and clicks of a target in a
/// context on a day. Rows for the same key are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub target_id: u64,
    pub target: TargetFeatures,
    pub context: ContextFeatures,
    pub day: i64,
    pub r: u64,
    pub clicks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_ctr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

/// Result of [`build_pool`].
#[derive(Clone, Debug, Default)]
pub struct Pool {
    pub samples: Vec<Sample>,
    /// Rows dropped because they carried no impressions.
    pub dropped_zero_r: usize,
    /// Calibration baseline per context id vector.
    pub baselines: BTreeMap<Vec<usize>, f64>,
}

/// Per-context calibration: the smoothed empirical CTR of all rows shown in
/// that context, `(Σclicks + 0.5) / (Σr + 1)`.
pub fn empirical_baselines(logs: &[LogRecord]) -> BTreeMap<Vec<usize>, f64> {
    let mut totals: BTreeMap<Vec<usize>, (u64, u64)> = BTreeMap::new();
    for row in logs {
        let e = totals.entry(row.context.context_ids.clone()).or_default();
        e.0 += row.r;
        e.1 += row.clicks;
    }
    totals
        .into_iter()
        .map(|(k, (r, c))| (k, (c as f64 + 0.5) / (r as f64 + 1.0)))
        .collect()
}

/// Aggregates rows into one labeled [`Sample`] per (target, context, day).
///
/// Baselines come from `baselines` when given, else from
/// [`empirical_baselines`] over `logs`. Output is ordered by
/// (day, target_id, context ids).
pub fn build_pool(
    logs: &[LogRecord],
    baselines: Option<&BTreeMap<Vec<usize>, f64>>,
) -> Result<Pool> {
    let computed;
    let baselines = match baselines {
        Some(b) => b,
        None => {
            computed = empirical_baselines(logs);
            &computed
        }
    };

    let mut merged: BTreeMap<(i64, u64, Vec<usize>), LogRecord> = BTreeMap::new();
    let mut dropped = 0;
    for row in logs {
        if row.r == 0 {
            dropped += 1;
            continue;
        }
        if row.clicks > row.r {
            return Err(Error::data(format!(
                "target {} day {}: clicks {} exceed impressions {}",
                row.target_id, row.day, row.clicks, row.r
            )));
        }
        let key = (row.day, row.target_id, row.context.context_ids.clone());
        match merged.get_mut(&key) {
            Some(acc) => {
                if acc.target != row.target {
                    return Err(Error::data(format!(
                        "target {} has inconsistent features across rows",
                        row.target_id
                    )));
                }
                acc.r += row.r;
                acc.clicks += row.clicks;
            }
            None => {
                merged.insert(key, row.clone());
            }
        }
    }

    let mut samples = Vec::with_capacity(merged.len());
    for ((day, target_id, ctx), row) in merged {
        let baseline = *baselines
            .get(&ctx)
            .ok_or_else(|| Error::data(format!("no calibration baseline for context {ctx:?}")))?;
        let y = noise::empirical_log_ctr(ImpressionRecord::new(row.r, row.clicks)?, baseline)?;
        samples.push(Sample {
            target_id,
            target: row.target,
            context: row.context,
            r: row.r,
            clicks: row.clicks,
            y,
            calibration_baseline: baseline,
            day,
            true_ctr: row.true_ctr,
            group: row.group,
        });
    }
    Ok(Pool {
        samples,
        dropped_zero_r: dropped,
        baselines: baselines.clone(),
    })
}

/// SplitMix64 finalizer; a fixed, portable 64-bit mix.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Whether `target_id` lands on the validation side for (`fraction`, `seed`).
pub fn is_validation_target(target_id: u64, fraction: f64, seed: u64) -> bool {
    let h = mix64(target_id ^ mix64(seed));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

/// Splits by hashed target id so no target appears on both sides.
pub fn split(
    pool: &[Sample],
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::config(format!(
            "validation fraction {validation_fraction} must lie in (0, 1)"
        )));
    }
    let (valid, train): (Vec<Sample>, Vec<Sample>) = pool
        .iter()
        .cloned()
        .partition(|s| is_validation_target(s.target_id, validation_fraction, seed));
    if train.is_empty() || valid.is_empty() {
        return Err(Error::config(format!(
            "validation fraction {validation_fraction} leaves one side of the split empty"
        )));
    }
    Ok((train, valid))
}

/// Vocabulary sizes a dataset was built against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub token: usize,
    pub categorical: Vec<usize>,
    pub context: Vec<usize>,
    pub content_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub record_count: usize,
    pub vocab: VocabSizes,
    pub split_seed: Option<u64>,
    /// Inclusive (first, last) day, `None` for an empty dataset.
    pub day_range: Option<(i64, i64)>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes samples as JSON Lines plus the manifest; returns the manifest.
pub fn write_dataset(
    path: &Path,
    samples: &[Sample],
    vocab: &VocabSizes,
    split_seed: Option<u64>,
) -> Result<DatasetManifest> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let day_range = samples
        .iter()
        .map(|s| s.day)
        .fold(None, |acc: Option<(i64, i64)>, d| {
            Some(acc.map_or((d, d), |(lo, hi)| (lo.min(d), hi.max(d))))
        });
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        record_count: samples.len(),
        vocab: vocab.clone(),
        split_seed,
        day_range,
    };
    std::fs::write(
        manifest_path(path),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Reads a dataset and checks it against its manifest.
pub fn read_dataset(path: &Path) -> Result<(Vec<Sample>, DatasetManifest)> {
    let mpath = manifest_path(path);
    let manifest: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(&mpath)
            .map_err(|e| Error::data(format!("{}: {e}", mpath.display())))?,
    )?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::data(format!(
            "dataset schema version {} is not supported (expected {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    let file = File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut samples = Vec::with_capacity(manifest.record_count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        samples.push(s);
    }
    if samples.len() != manifest.record_count {
        return Err(Error::data(format!(
            "{} holds {} records but its manifest declares {}",
            path.display(),
            samples.len(),
            manifest.record_count
        )));
    }
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn target(tok: usize) -> TargetFeatures {
        TargetFeatures {
            token_ids: vec![tok],
            categorical_ids: vec![0],
            content_reals: vec![0.5, -0.25],
        }
    }

    fn row(id: u64, ctx: usize, day: i64, r: u64, clicks: u64) -> LogRecord {
        LogRecord {
            target_id: id,
            target: target(id as usize % 7),
            context: ContextFeatures::categorical(vec![ctx]),
            day,
            r,
            clicks,
            true_ctr: Some(0.01),
            group: Some(0),
        }
    }

    fn fixed_baseline(b: f64) -> BTreeMap<Vec<usize>, f64> {
        (0..3).map(|c| (vec![c], b)).collect()
    }

    #[test]
    fn empty_logs_empty_pool() {
        let pool = build_pool(&[], None).unwrap();
        assert!(pool.samples.is_empty());
    }

    #[test]
    fn single_row_label() {
        let pool = build_pool(&[row(1, 0, 0, 100, 1)], Some(&fixed_baseline(0.01))).unwrap();
        let y = pool.samples[0].y;
        let oracle = ((1.5f64 / 101.0) / 0.01).ln();
        assert!((y - oracle).abs() < 1e-12);
        assert!((y - 0.395515).abs() < 1e-5);
    }

    #[test]
    fn pool_counts_distinct_triples_and_drops_zero_r() {
        let logs = vec![
            row(1, 0, 0, 10, 1),
            row(1, 0, 0, 5, 0),
            row(1, 1, 0, 3, 0),
            row(1, 0, 1, 7, 2),
            row(2, 0, 0, 0, 0),
            row(3, 2, 4, 9, 9),
        ];
        let pool = build_pool(&logs, Some(&fixed_baseline(0.05))).unwrap();
        assert_eq!(pool.samples.len(), 4);
        assert_eq!(pool.dropped_zero_r, 1);
        let merged = &pool.samples[0];
        assert_eq!((merged.r, merged.clicks), (15, 1));
        for s in &pool.samples {
            assert!((s.recompute_label().unwrap() - s.y).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_baseline_per_context() {
        let logs = vec![row(1, 0, 0, 99, 9), row(2, 1, 0, 9, 0)];
        let b = empirical_baselines(&logs);
        assert!((b[&vec![0]] - 9.5 / 100.0).abs() < 1e-15);
        assert!((b[&vec![1]] - 0.5 / 10.0).abs() < 1e-15);
    }

    fn many_targets(n: u64) -> Vec<Sample> {
        let logs: Vec<LogRecord> = (0..n).map(|i| row(i, 0, 0, 10, 1)).collect();
        build_pool(&logs, Some(&fixed_baseline(0.1)))
            .unwrap()
            .samples
    }

    #[test]
    fn split_is_balanced_disjoint_and_deterministic() {
        let pool = many_targets(1000);
        let (train, valid) = split(&pool, 0.5, 42).unwrap();
        assert!((400..=600).contains(&train.len()), "{}", train.len());
        let ids: std::collections::BTreeSet<u64> = train.iter().map(|s| s.target_id).collect();
        assert!(valid.iter().all(|s| !ids.contains(&s.target_id)));
        let (train2, valid2) = split(&pool, 0.5, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(valid, valid2);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let pool = many_targets(3);
        assert!(matches!(split(&pool, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(split(&pool, 1.0, 1), Err(Error::Config(_))));
        // A single target can never populate both sides.
        assert!(matches!(split(&pool[..1], 0.5, 1), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let vocab = VocabSizes {
            token: 7,
            categorical: vec![1],
            context: vec![3],
            content_dim: 2,
        };
        let pool = many_targets(5);
        write_dataset(&path, &pool, &vocab, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first_line = text.lines().next().unwrap().to_string();
        std::fs::write(&path, format!("{text}{first_line}\n")).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn file_round_trip(
            rows in prop::collection::vec((0u64..50, 0usize..3, 0i64..5, 1u64..5000, 0u64..100, 1e-4f64..0.3), 1..40)
        ) {
            let logs: Vec<LogRecord> = rows.into_iter().map(|(id, c, d, r, k, p)| {
                let mut rec = row(id, c, d, r, k.min(r));
                rec.true_ctr = Some(p);
                rec
            }).collect();
            let pool = build_pool(&logs, None).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.jsonl");
            let vocab = VocabSizes { token: 7, categorical: vec![1], context: vec![3], content_dim: 2 };
            let m = write_dataset(&path, &pool.samples, &vocab, Some(9)).unwrap();
            let (back, m2) = read_dataset(&path).unwrap();
            prop_assert_eq!(&back, &pool.samples);
            prop_assert_eq!(m, m2);
        }
    }
}
