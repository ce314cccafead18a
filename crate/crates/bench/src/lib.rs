//! Shared fixtures for the criterion benchmarks: one synthetic participant at
//! the full 1250 Hz sample rate, featurized windows, and randomly initialized
//! models of every architecture (weights do not affect inference cost).

use mimil_core::features::{baseline_score, featurize_window, BagRecord, BaselineScore, FeatureMode};
use mimil_core::models::{Bag, ModelKind, TrainConfig, TrainedModel, ZScore};
use mimil_core::rng::rng_from_seed;
use mimil_core::signal::{extract_windows_default, Condition, Group, Window};
use mimil_core::synth::{generate_participant, SynthConfig};

pub struct Fixture {
    pub window: Window,
    pub baseline: BaselineScore,
    pub bag: Bag,
    pub model: TrainedModel,
}

/// Builds one task window and a model of `kind` operating on `mode` features.
pub fn fixture(kind: ModelKind, mode: FeatureMode) -> Fixture {
    let config = SynthConfig {
        windows_per_participant: 1,
        ..SynthConfig::default()
    };
    let data = generate_participant("bench", Group::Cws, &config, 42).expect("participant");
    let baseline = baseline_score(&extract_windows_default(&data.baseline).expect("windows"))
        .expect("baseline score");
    let window = extract_windows_default(&data.task).expect("windows").remove(0);
    let grid = featurize_window(&window, mode, Some(&baseline)).expect("features");
    let record = BagRecord::new("bench", "bench-w000", Condition::Task, 1, mode, &grid);
    let bag = Bag::from_record(&record).expect("bag");

    let mut rng = rng_from_seed(42);
    let store = kind.init(mode, &mut rng).expect("init");
    let model = TrainedModel {
        kind,
        feature_mode: mode,
        store,
        zscore: ZScore::fit(std::slice::from_ref(&bag)).expect("zscore"),
        config: TrainConfig { feature_mode: mode, ..TrainConfig::default() },
        seed: 42,
    };
    Fixture { window, baseline, bag, model }
}
