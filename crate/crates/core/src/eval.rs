//! Person-disjoint evaluation: split construction, classification metrics,
//! multi-seed experiment orchestration, and inference-latency benchmarking.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{featurize_window, BaselineScore};
use crate::models::{train, Bag, ModelKind, TrainConfig, TrainedModel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::signal::{Group, Window};
use crate::{Error, Result};

/// Participants reserved per class for the test and validation sets.
const HOLDOUT_PER_CLASS: usize = 3;

/// A participant-level split. Every bag follows its participant, so the three
/// sets share no people.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test: Vec<String>,
    pub val: Vec<String>,
    pub train: Vec<String>,
}

/// Draws 3 CWS + 3 CWNS participants for test, another 3 + 3 for validation,
/// and leaves the rest for training. Deterministic given the seed.
pub fn person_disjoint_split(
    participants: &[(String, Group)],
    seed: u64,
) -> Result<SplitSpec> {
    let mut by_id: BTreeMap<&str, Group> = BTreeMap::new();
    for (id, group) in participants {
        if let Some(prev) = by_id.insert(id, *group) {
            if prev != *group {
                return Err(Error::Data(format!(
                    "participant {id} is listed in both groups"
                )));
            }
        }
    }
    let mut pools: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (id, group) in &by_id {
        pools[group.label() as usize].push(id);
    }
    let need = 2 * HOLDOUT_PER_CLASS + 1;
    for (pool, name) in pools.iter().zip(["CWNS", "CWS"]) {
        if pool.len() < need {
            return Err(Error::Data(format!(
                "need at least {need} {name} participants (3 test + 3 val + 1 train), got {}",
                pool.len()
            )));
        }
    }

    let mut rng = rng_from_seed(derive_seed(seed, "person-disjoint-split"));
    let mut split = SplitSpec { seed, test: vec![], val: vec![], train: vec![] };
    for pool in &mut pools {
        // BTreeMap iteration fixed the base order; the shuffle is the only
        // source of randomness.
        for i in (1..pool.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            pool.swap(i, j);
        }
        split.test.extend(pool[..HOLDOUT_PER_CLASS].iter().map(|s| s.to_string()));
        split
            .val
            .extend(pool[HOLDOUT_PER_CLASS..2 * HOLDOUT_PER_CLASS].iter().map(|s| s.to_string()));
        split.train.extend(pool[2 * HOLDOUT_PER_CLASS..].iter().map(|s| s.to_string()));
    }
    for set in [&mut split.test, &mut split.val, &mut split.train] {
        set.sort();
    }
    Ok(split)
}

/// Partitions bags by the split's participant sets. Every bag must belong to
/// exactly one set; an unknown participant is an error.
pub fn split_bags(bags: &[Bag], split: &SplitSpec) -> Result<(Vec<Bag>, Vec<Bag>, Vec<Bag>)> {
    let membership = |id: &str| {
        let sets = [
            split.train.iter().any(|p| p == id),
            split.val.iter().any(|p| p == id),
            split.test.iter().any(|p| p == id),
        ];
        match sets {
            [true, false, false] => Ok(0usize),
            [false, true, false] => Ok(1),
            [false, false, true] => Ok(2),
            [false, false, false] => Err(Error::Data(format!(
                "participant {id} is not assigned to any split set"
            ))),
            _ => Err(Error::Data(format!(
                "participant {id} appears in more than one split set"
            ))),
        }
    };
    let mut out: [Vec<Bag>; 3] = [vec![], vec![], vec![]];
    for bag in bags {
        out[membership(&bag.participant_id)?].push(bag.clone());
    }
    let [train, val, test] = out;
    Ok((train, val, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// The five paper metrics plus the confusion counts they derive from. When a
/// metric's denominator is zero it is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub counts: ConfusionCounts,
    pub zero_denominator: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Computes metrics at `threshold` with CWS (label 1) as the positive class.
pub fn compute_metrics(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    if probabilities.is_empty() {
        return Err(Error::Data("compute_metrics on empty predictions".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", probabilities.len()),
            format!("{}", labels.len()),
        ));
    }
    let mut counts = ConfusionCounts::default();
    for (p, &y) in probabilities.iter().zip(labels) {
        if !p.is_finite() {
            return Err(Error::Numeric(format!("non-finite probability {p}")));
        }
        if y > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {y}")));
        }
        match (*p >= threshold, y == 1) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(metrics_from_counts(counts))
}

/// Rebuilds the five metrics from confusion counts alone.
pub fn metrics_from_counts(counts: ConfusionCounts) -> Metrics {
    let ConfusionCounts { tp, fp, tn, fn_ } = counts;
    let mut flag = false;
    let precision = ratio(tp, tp + fp, &mut flag);
    let recall = ratio(tp, tp + fn_, &mut flag);
    let specificity = ratio(tn, tn + fp, &mut flag);
    let accuracy = ratio(tp + tn, tp + fp + tn + fn_, &mut flag);
    let f1 = if precision + recall == 0.0 {
        flag = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics { accuracy, f1, precision, recall, specificity, counts, zero_denominator: flag }
}

/// Runs the model over `bags` and scores it at the 0.5 threshold.
pub fn evaluate_model(model: &TrainedModel, bags: &[Bag]) -> Result<Metrics> {
    let probabilities: Vec<f64> = bags
        .par_iter()
        .map(|bag| model.predict(bag).map(|p| p.probability))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    compute_metrics(&probabilities, &labels, 0.5)
}

/// Everything an experiment run depends on; hashed to name the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub train: TrainConfig,
    /// The split seed is separate from the training seeds: one split is
    /// reused across seeds, mirroring the fixed hold-out protocol.
    pub split_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub epochs_run: usize,
}

/// Seed-averaged metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub split: SplitSpec,
    pub per_seed: Vec<SeedResult>,
    /// Metrics averaged across seeds.
    pub mean: MeanMetrics,
    /// Confusion counts summed across seeds, for count-level aggregation.
    pub pooled_counts: ConfusionCounts,
    #[serde(skip)]
    pub run_dir: Option<PathBuf>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// FNV-1a content fingerprint, hex-encoded; also used to name run
/// directories.
pub fn content_hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Hash that names an experiment's run directory: two runs with identical
/// configuration land in the same directory.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(content_hash_hex(json.as_bytes()))
}

/// Splits, trains one model per seed, and scores each on the held-out test
/// participants. When `out_dir` is given, writes `run-<confighash>/` with the
/// config echo, the report, and per-seed weights.
pub fn run_experiment(
    bags: &[Bag],
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    let mut participants: Vec<(String, Group)> = Vec::new();
    for bag in bags {
        let group = if bag.label == 1 { Group::Cws } else { Group::Cwns };
        participants.push((bag.participant_id.clone(), group));
    }
    if config.train.seeds.is_empty() {
        return Err(Error::Parameter("experiment needs at least one training seed".into()));
    }
    let split = person_disjoint_split(&participants, config.split_seed)?;
    let (train_bags, val_bags, test_bags) = split_bags(bags, &split)?;

    let run_dir = match out_dir {
        Some(base) => {
            let dir = base.join(format!("run-{}", config_hash(config)?));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
            Some(dir)
        }
        None => None,
    };

    let mut per_seed = Vec::with_capacity(config.train.seeds.len());
    for &seed in &config.train.seeds {
        let (mut model, history) = train(config.model, &train_bags, &val_bags, &config.train, seed)
            .map_err(|e| Error::Data(format!("seed {seed}: {e}")))?;
        // Score on the f32 weight grid the model is stored in, so the report
        // is reproducible from the saved artifacts.
        model.store.quantize_f32();
        let metrics = evaluate_model(&model, &test_bags)
            .map_err(|e| Error::Data(format!("seed {seed}: {e}")))?;
        if let Some(dir) = &run_dir {
            model.save(&dir.join(format!("model-seed{seed}")))?;
        }
        per_seed.push(SeedResult { seed, metrics, epochs_run: history.len() });
    }

    let n = per_seed.len() as f64;
    let mean = MeanMetrics {
        accuracy: per_seed.iter().map(|s| s.metrics.accuracy).sum::<f64>() / n,
        f1: per_seed.iter().map(|s| s.metrics.f1).sum::<f64>() / n,
        precision: per_seed.iter().map(|s| s.metrics.precision).sum::<f64>() / n,
        recall: per_seed.iter().map(|s| s.metrics.recall).sum::<f64>() / n,
        specificity: per_seed.iter().map(|s| s.metrics.specificity).sum::<f64>() / n,
    };
    let pooled_counts = per_seed.iter().fold(ConfusionCounts::default(), |acc, s| {
        ConfusionCounts {
            tp: acc.tp + s.metrics.counts.tp,
            fp: acc.fp + s.metrics.counts.fp,
            tn: acc.tn + s.metrics.counts.tn,
            fn_: acc.fn_ + s.metrics.counts.fn_,
        }
    });
    let report = ExperimentReport { config: config.clone(), split, per_seed, mean, pooled_counts, run_dir };
    if let Some(dir) = &report.run_dir {
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub n_iters: usize,
    /// Model forward only, from a precomputed feature grid.
    pub inference: LatencyStats,
    /// Feature extraction plus model forward, per window.
    pub with_features: LatencyStats,
}

fn stats(mut times: Vec<f64>) -> LatencyStats {
    times.sort_by(|a, b| a.partial_cmp(b).expect("NaN latency"));
    let n = times.len();
    LatencyStats {
        mean_s: times.iter().sum::<f64>() / n as f64,
        p95_s: times[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1],
        max_s: times[n - 1],
    }
}

/// Times single-window inference. The model is warmed up with 10 discarded
/// iterations first; feature extraction is reported separately so the model
/// forward can be compared against the paper's run-time table.
pub fn bench_latency(
    model: &TrainedModel,
    window: &Window,
    baseline: Option<&BaselineScore>,
    n_iters: usize,
) -> Result<LatencyReport> {
    if n_iters == 0 {
        return Err(Error::Parameter("bench_latency needs at least one iteration".into()));
    }
    let grid = featurize_window(window, model.feature_mode, baseline)?;
    for _ in 0..10 {
        model.predict_grid(&grid)?;
    }
    let mut inference = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let t0 = Instant::now();
        model.predict_grid(&grid)?;
        inference.push(t0.elapsed().as_secs_f64());
    }
    let mut with_features = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let t0 = Instant::now();
        let grid = featurize_window(window, model.feature_mode, baseline)?;
        model.predict_grid(&grid)?;
        with_features.push(t0.elapsed().as_secs_f64());
    }
    Ok(LatencyReport {
        n_iters,
        inference: stats(inference),
        with_features: stats(with_features),
    })
}
