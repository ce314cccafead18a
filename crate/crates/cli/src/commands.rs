//! Batch subcommands: generate, featurize, train, evaluate, explain, rank,
//! bench.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use mimil_core::eval::{
    bench_latency, content_hash_hex, evaluate_model, run_experiment, split_bags, ExperimentConfig,
    ExperimentReport, Metrics,
};
use mimil_core::explain::{
    background_from_bags, explain_window, export_heatmap, Grouping, HeatmapFormat, ShapMode,
    DEFAULT_COALITIONS,
};
use mimil_core::features::{
    baseline_score, feature_names, featurize_window, load_bag_records, save_bag_records,
    BagRecord, BaselineScore, FeatureMatrix, FeatureMode,
};
use mimil_core::models::{ridge_rank, Bag, ModelKind, TrainConfig, TrainedModel};
use mimil_core::signal::{
    extract_windows_default, load_manifest, load_recording, Condition, ManifestEntry,
    RawRecording,
};
use mimil_core::synth::{generate_dataset, SynthConfig};
use mimil_core::{Error, Result};

#[derive(Args)]
pub struct GenerateArgs {
    /// JSON generator config; missing keys take defaults, unknown keys are
    /// rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "change")]
    pub feature_mode: String,
}

fn read_config(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mode = FeatureMode::parse(&args.feature_mode)?;

    std::fs::create_dir_all(&args.out)?;
    let dataset = generate_dataset(&config, mode, Some(&args.out))?;
    std::fs::write(args.out.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    let bags_path = args.out.join("bags.jsonl");
    let hash = content_hash_hex(&std::fs::read(&bags_path)?);
    println!("manifest: {}", args.out.join("manifest.json").display());
    println!(
        "bags: {} ({} windows, {} mode)",
        bags_path.display(),
        dataset.bags.len(),
        mode.as_str()
    );
    println!("dataset hash: {hash}");
    Ok(())
}

#[derive(Args)]
pub struct FeaturizeArgs {
    /// Recording manifest written by `generate` (or assembled by hand).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "change")]
    pub feature_mode: String,
    /// Output JSONL bag file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Manifest entries may be relative to the manifest's own directory.
fn resolve_entry(entry: &ManifestEntry, base: &Path) -> ManifestEntry {
    let fix = |p: &Path| -> PathBuf {
        if p.exists() || p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    ManifestEntry { meta: fix(&entry.meta), csv: fix(&entry.csv) }
}

pub fn featurize(args: FeaturizeArgs) -> Result<()> {
    let mode = FeatureMode::parse(&args.feature_mode)?;
    let manifest = load_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();

    // Group each participant's recordings so the baseline is scored before
    // its task windows, one participant in memory at a time.
    let mut by_participant: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    for entry in &manifest {
        let entry = resolve_entry(entry, &base);
        let meta: mimil_core::signal::RecordingMeta =
            serde_json::from_str(&std::fs::read_to_string(&entry.meta)?)?;
        by_participant.entry(meta.participant_id).or_default().push(entry);
    }

    let mut records = Vec::new();
    for (pid, entries) in &by_participant {
        let mut baseline: Option<RawRecording> = None;
        let mut task: Option<RawRecording> = None;
        for entry in entries {
            let recording = load_recording(entry)?;
            match recording.condition {
                Condition::Baseline => baseline = Some(recording),
                Condition::Task => task = Some(recording),
            }
        }
        let Some(task) = task else {
            continue;
        };
        let score: Option<BaselineScore> = match (mode, &baseline) {
            (FeatureMode::Raw, _) => None,
            (_, Some(b)) => Some(baseline_score(&extract_windows_default(b)?)?),
            (_, None) => {
                return Err(Error::Data(format!(
                    "no baseline recording for participant {pid} ({} mode needs one)",
                    mode.as_str()
                )))
            }
        };
        for (w, window) in extract_windows_default(&task)?.iter().enumerate() {
            let grid = featurize_window(window, mode, score.as_ref())?;
            records.push(BagRecord::new(
                pid.clone(),
                format!("{pid}-w{w:03}"),
                Condition::Task,
                task.group.label(),
                mode,
                &grid,
            ));
        }
    }
    if records.is_empty() {
        return Err(Error::Data("manifest contains no task recordings".into()));
    }
    save_bag_records(&args.out, &records)?;
    println!(
        "wrote {} bags ({} columns, {} mode) to {}",
        records.len(),
        mode.n_cols(),
        mode.as_str(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSONL bag file.
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long, default_value = "mimil")]
    pub model: String,
    /// Run directory parent; the run lands in `<out>/run-<confighash>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 7)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

pub fn load_bags(path: &Path) -> Result<(Vec<Bag>, FeatureMode)> {
    let records = load_bag_records(path)?;
    let Some(first) = records.first() else {
        return Err(Error::Data(format!("{}: no bags", path.display())));
    };
    let mode = first.feature_mode;
    let bags: Vec<Bag> = records.iter().map(Bag::from_record).collect::<Result<_>>()?;
    for bag in &bags {
        if bag.feature_mode != mode {
            return Err(Error::Data(format!(
                "{}: mixed feature modes ({} vs {})",
                path.display(),
                mode.as_str(),
                bag.feature_mode.as_str()
            )));
        }
    }
    Ok((bags, mode))
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}: f1 {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}  specificity {:.4}",
        m.f1, m.accuracy, m.precision, m.recall, m.specificity
    );
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (bags, mode) = load_bags(&args.bags)?;
    let config = ExperimentConfig {
        model: ModelKind::parse(&args.model)?,
        train: TrainConfig {
            lr: args.lr,
            epochs: args.epochs,
            patience: args.patience,
            batch_size: args.batch_size,
            seeds: args.seeds.clone(),
            feature_mode: mode,
            dropout: args.dropout,
        },
        split_seed: args.split_seed,
    };
    std::fs::create_dir_all(&args.out)?;
    let report = run_experiment(&bags, &config, Some(&args.out))?;
    let run_dir = report.run_dir.as_ref().expect("run dir requested");
    println!("run: {}", run_dir.display());
    for result in &report.per_seed {
        print_metrics(&format!("seed {}", result.seed), &result.metrics);
    }
    println!(
        "mean: f1 {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}  specificity {:.4}",
        report.mean.f1, report.mean.accuracy, report.mean.precision, report.mean.recall,
        report.mean.specificity
    );
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// A `run-<hash>` directory written by `train`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// The bag file the run was trained on.
    #[arg(long)]
    pub bags: PathBuf,
}

fn load_report(run_dir: &Path) -> Result<ExperimentReport> {
    let path = run_dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let report = load_report(&args.run_dir)?;
    let (bags, mode) = load_bags(&args.bags)?;
    if mode != report.config.train.feature_mode {
        return Err(Error::Parameter(format!(
            "run was trained on {} features, bag file carries {}",
            report.config.train.feature_mode.as_str(),
            mode.as_str()
        )));
    }
    let (_train, _val, test) = split_bags(&bags, &report.split)?;
    let mut rescored = Vec::new();
    for result in &report.per_seed {
        let model = TrainedModel::load(&args.run_dir.join(format!("model-seed{}", result.seed)))?;
        let metrics = evaluate_model(&model, &test)?;
        print_metrics(&format!("seed {}", result.seed), &metrics);
        let matches = metrics == result.metrics;
        println!(
            "  stored report {}",
            if matches { "reproduced exactly" } else { "MISMATCH" }
        );
        rescored.push((result.seed, metrics));
    }
    let out = args.run_dir.join("evaluate.json");
    std::fs::write(
        &out,
        serde_json::to_string_pretty(
            &rescored
                .iter()
                .map(|(seed, m)| serde_json::json!({ "seed": seed, "metrics": m }))
                .collect::<Vec<_>>(),
        )?,
    )?;
    println!("wrote {}", out.display());
    if rescored.iter().zip(&report.per_seed).any(|((_, m), r)| *m != r.metrics) {
        return Err(Error::Data("re-scored metrics differ from the stored report".into()));
    }
    Ok(())
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    /// `grouped` (19 x 4 modality grid) or `full` (19 x D feature grid).
    #[arg(long, default_value = "grouped")]
    pub mode: String,
    /// Window ids to explain; defaults to the first test window.
    #[arg(long)]
    pub window: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_COALITIONS)]
    pub coalitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// csv, pgm, or json.
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Defaults to `<run-dir>/explain`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn explain(args: ExplainArgs) -> Result<()> {
    let grouping = match args.mode.as_str() {
        "grouped" => Grouping::ModalityTimestep,
        "full" => Grouping::Cell,
        other => {
            return Err(Error::Parameter(format!(
                "unknown explain mode {other:?} (expected grouped or full)"
            )))
        }
    };
    let format = HeatmapFormat::parse(&args.format)?;
    let report = load_report(&args.run_dir)?;
    let seed = report.config.train.seeds[0];
    let model = TrainedModel::load(&args.run_dir.join(format!("model-seed{seed}")))?;
    let (bags, _mode) = load_bags(&args.bags)?;
    let (train, _val, test) = split_bags(&bags, &report.split)?;
    let background = background_from_bags(&train)?;

    let targets: Vec<&Bag> = if args.window.is_empty() {
        test.first().into_iter().collect()
    } else {
        args.window
            .iter()
            .map(|id| {
                bags.iter()
                    .find(|b| &b.window_id == id)
                    .ok_or_else(|| Error::Data(format!("window {id} not found in bag file")))
            })
            .collect::<Result<_>>()?
    };

    let out_dir = args.out.clone().unwrap_or_else(|| args.run_dir.join("explain"));
    std::fs::create_dir_all(&out_dir)?;
    let shap_mode = ShapMode::Sampled { n_coalitions: args.coalitions, seed: args.seed };
    for bag in targets {
        let explanation = explain_window(&model, bag, &background, grouping, shap_mode)?;
        let json_path = out_dir.join(format!("shap-{}.json", bag.window_id));
        std::fs::write(&json_path, serde_json::to_string_pretty(&explanation)?)?;
        let grid_path = out_dir.join(format!("shap-{}.{}", bag.window_id, args.format));
        export_heatmap(&explanation.grid(), &explanation.feature_names, &grid_path, format)?;
        println!(
            "{}: {} x {} grid -> {}",
            bag.window_id, explanation.n_rows, explanation.n_cols,
            grid_path.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct RankArgs {
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Optional CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn rank(args: RankArgs) -> Result<()> {
    let records = load_bag_records(&args.bags)?;
    let Some(first) = records.first() else {
        return Err(Error::Data(format!("{}: no bags", args.bags.display())));
    };
    let mode = first.feature_mode;
    let n_cols = mode.n_cols();
    let n_rows: usize = records.iter().map(|r| r.n_rows).sum();
    let mut x = FeatureMatrix::zeros(n_rows, n_cols);
    let mut y = Vec::with_capacity(n_rows);
    let mut row = 0;
    for record in &records {
        record.validate()?;
        let grid = record.grid();
        for r in 0..grid.n_rows {
            for c in 0..n_cols {
                x.set(row, c, grid.get(r, c));
            }
            y.push(record.label);
            row += 1;
        }
    }
    let ranking = ridge_rank(&x, &y, args.lambda)?;
    let names = feature_names(mode);
    println!("{:<5} {:<24} {}", "Rank", "Feature", "Coefficient");
    let mut csv = String::from("rank,feature,coefficient\n");
    for (rank, (index, coefficient)) in ranking.iter().enumerate() {
        println!("{:<5} {:<24} {:.6}", rank + 1, names[*index], coefficient);
        csv.push_str(&format!("{},{},{}\n", rank + 1, names[*index], coefficient));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, csv)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Recording manifest supplying the benchmark window.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Participant to draw the window from; defaults to the first with a
    /// task recording.
    #[arg(long)]
    pub participant: Option<String>,
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let report = load_report(&args.run_dir)?;
    let seed = report.config.train.seeds[0];
    let model = TrainedModel::load(&args.run_dir.join(format!("model-seed{seed}")))?;

    let manifest = load_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut baseline: Option<RawRecording> = None;
    let mut task: Option<RawRecording> = None;
    for entry in &manifest {
        let entry = resolve_entry(entry, &base);
        let recording = load_recording(&entry)?;
        if let Some(pid) = &args.participant {
            if &recording.participant_id != pid {
                continue;
            }
        } else if let Some(t) = &task {
            if recording.participant_id != t.participant_id {
                continue;
            }
        }
        match recording.condition {
            Condition::Baseline => baseline = Some(recording),
            Condition::Task => task = Some(recording),
        }
    }
    let task = task.ok_or_else(|| Error::Data("no task recording in manifest".into()))?;
    let score = match (model.feature_mode, &baseline) {
        (FeatureMode::Raw, _) => None,
        (_, Some(b)) => Some(baseline_score(&extract_windows_default(b)?)?),
        (_, None) => {
            return Err(Error::Data(format!(
                "no baseline recording for participant {}",
                task.participant_id
            )))
        }
    };
    let windows = extract_windows_default(&task)?;
    let window = windows
        .first()
        .ok_or_else(|| Error::Data("task recording shorter than one window".into()))?;

    let latency = bench_latency(&model, window, score.as_ref(), args.iters)?;
    println!("{}", serde_json::to_string_pretty(&latency)?);
    Ok(())
}
