//! Model interpretation: KernelSHAP attributions over the 19-segment feature
//! grid, global importance aggregation, and heatmap exports.

mod export;
mod shap;

pub use export::{
    export_heatmap, parse_heatmap_csv, HeatmapFormat, HeatmapJson, NEGATIVE_POLE, POSITIVE_POLE,
};
pub use shap::{
    kernel_shap, shapley_kernel_weight, singleton_groups, ShapMode, ShapValues,
    EXACT_GROUP_LIMIT,
};

use serde::{Deserialize, Serialize};

use crate::features::{feature_names, FeatureMatrix, Modality};
use crate::models::{Bag, TrainedModel};
use crate::{Error, Result};

/// Default coalition budget when sampling the full per-cell feature space.
pub const DEFAULT_COALITIONS: usize = 4096;

/// Classification threshold used by the true-prediction filter.
const THRESHOLD: f64 = 0.5;

/// How grid cells are grouped into SHAP players.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Every cell is its own player (19 x D features; needs sampled mode).
    Cell,
    /// One player per (segment, modality) pair: 19 x 4 = 76 groups. Coarser
    /// but much cheaper; the resulting grid has one column per modality.
    ModalityTimestep,
}

/// A per-window attribution grid plus the metadata needed to aggregate it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub window_id: String,
    pub participant_id: String,
    pub true_label: u8,
    /// Model output on the background grid.
    pub base_value: f64,
    /// Model output on the explained window.
    pub predicted: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major Shapley values, one row per 2 s segment.
    pub phi: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl ShapExplanation {
    pub fn grid(&self) -> FeatureMatrix {
        FeatureMatrix { n_rows: self.n_rows, n_cols: self.n_cols, data: self.phi.clone() }
    }
}

/// Mean attribution grid over correctly classified windows of one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub class: u8,
    pub n_windows: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub grid: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl GlobalImportance {
    pub fn grid_matrix(&self) -> FeatureMatrix {
        FeatureMatrix { n_rows: self.n_rows, n_cols: self.n_cols, data: self.grid.clone() }
    }
}

/// Per-feature mean over every instance row of the given bags, broadcast to a
/// full grid. This is the background the explanations mask against.
pub fn background_from_bags(bags: &[Bag]) -> Result<FeatureMatrix> {
    if bags.is_empty() {
        return Err(Error::Data("background requires at least one bag".into()));
    }
    let mode = bags[0].feature_mode;
    let d = mode.n_cols();
    let mut mean = vec![0.0; d];
    let mut n = 0.0;
    for bag in bags {
        if bag.feature_mode != mode {
            return Err(Error::Data(format!(
                "bag {} mixes feature modes in the background set",
                bag.window_id
            )));
        }
        let grid = bag.concat();
        for r in 0..grid.n_rows {
            for (m, v) in mean.iter_mut().zip(grid.row(r)) {
                *m += v;
            }
            n += 1.0;
        }
    }
    let n_rows = bags[0].n_instances();
    let mut out = FeatureMatrix::zeros(n_rows, d);
    for r in 0..n_rows {
        for (c, m) in mean.iter().enumerate() {
            out.set(r, c, m / n);
        }
    }
    Ok(out)
}

fn modality_timestep_groups(grid: &FeatureMatrix, mode: crate::features::FeatureMode) -> Vec<Vec<usize>> {
    let mut groups = Vec::with_capacity(grid.n_rows * 4);
    for r in 0..grid.n_rows {
        for m in Modality::ALL {
            groups.push(
                mode.modality_columns(m)
                    .map(|c| r * grid.n_cols + c)
                    .collect(),
            );
        }
    }
    groups
}

/// Explains one window's prediction against a background grid.
///
/// With [`Grouping::Cell`] the phi grid matches the feature grid shape; with
/// [`Grouping::ModalityTimestep`] it is 19 x 4 with one column per modality.
pub fn explain_window(
    model: &TrainedModel,
    bag: &Bag,
    background: &FeatureMatrix,
    grouping: Grouping,
    mode: ShapMode,
) -> Result<ShapExplanation> {
    if bag.feature_mode != model.feature_mode {
        return Err(Error::Parameter(format!(
            "model expects {} features, bag {} carries {}",
            model.feature_mode.as_str(),
            bag.window_id,
            bag.feature_mode.as_str()
        )));
    }
    let x = bag.concat();
    let (groups, names, n_cols) = match grouping {
        Grouping::Cell => (
            singleton_groups(x.data.len()),
            feature_names(bag.feature_mode),
            x.n_cols,
        ),
        Grouping::ModalityTimestep => (
            modality_timestep_groups(&x, bag.feature_mode),
            Modality::ALL.iter().map(|m| m.name().to_string()).collect(),
            4,
        ),
    };
    let values = kernel_shap(|g| model.predict_grid(g), &x, background, &groups, mode)?;

    // Local accuracy is enforced exactly by the constrained fit; keep the
    // assertion anyway so a future regression cannot ship silently.
    let total: f64 = values.phi.iter().sum();
    let gap = (values.base_value + total - values.predicted).abs();
    let tolerance = match mode {
        ShapMode::Exact => 1e-6,
        ShapMode::Sampled { .. } => 0.05 * (values.predicted - values.base_value).abs() + 1e-9,
    };
    if gap > tolerance {
        return Err(Error::Numeric(format!(
            "explanation for {} violates local accuracy by {gap:.3e}",
            bag.window_id
        )));
    }

    Ok(ShapExplanation {
        window_id: bag.window_id.clone(),
        participant_id: bag.participant_id.clone(),
        true_label: bag.label,
        base_value: values.base_value,
        predicted: values.predicted,
        n_rows: values.phi.len() / n_cols,
        n_cols,
        phi: values.phi,
        feature_names: names,
    })
}

/// Elementwise mean of phi grids over windows of `class` the model classified
/// correctly at the 0.5 threshold.
pub fn global_importance(
    explanations: &[ShapExplanation],
    class: u8,
) -> Result<GlobalImportance> {
    if class > 1 {
        return Err(Error::Parameter(format!("class label must be 0 or 1, got {class}")));
    }
    let qualifying: Vec<&ShapExplanation> = explanations
        .iter()
        .filter(|e| e.true_label == class && (e.predicted >= THRESHOLD) == (class == 1))
        .collect();
    let Some(first) = qualifying.first() else {
        let name = if class == 1 { "CWS" } else { "CWNS" };
        return Err(Error::Data(format!(
            "no correctly classified {name} windows to aggregate"
        )));
    };
    let mut grid = vec![0.0; first.phi.len()];
    for e in &qualifying {
        if e.n_rows != first.n_rows || e.n_cols != first.n_cols {
            return Err(Error::shape(
                format!("{}x{} phi grid", first.n_rows, first.n_cols),
                format!("{}x{} for {}", e.n_rows, e.n_cols, e.window_id),
            ));
        }
        for (g, p) in grid.iter_mut().zip(&e.phi) {
            *g += p;
        }
    }
    let n = qualifying.len();
    for g in &mut grid {
        *g /= n as f64;
    }
    Ok(GlobalImportance {
        class,
        n_windows: n,
        n_rows: first.n_rows,
        n_cols: first.n_cols,
        grid,
        feature_names: first.feature_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMode;
    use crate::models::test_support::random_bag;
    use crate::models::{ModelKind, TrainConfig, ZScore};
    use crate::rng::rng_from_seed;

    fn toy_model(kind: ModelKind, mode: FeatureMode, seed: u64) -> TrainedModel {
        let mut rng = rng_from_seed(seed);
        let d = mode.n_cols();
        TrainedModel {
            kind,
            feature_mode: mode,
            store: kind.init(mode, &mut rng).unwrap(),
            zscore: ZScore { mean: vec![0.0; d], std: vec![1.0; d] },
            config: TrainConfig::default(),
            seed,
        }
    }

    #[test]
    fn grouped_explanation_has_modality_grid_shape() {
        let model = toy_model(ModelKind::Mimil, FeatureMode::Change, 3);
        let bag = random_bag(FeatureMode::Change, 1, 9);
        let background = background_from_bags(&[random_bag(FeatureMode::Change, 0, 10)]).unwrap();
        let exp = explain_window(
            &model,
            &bag,
            &background,
            Grouping::ModalityTimestep,
            ShapMode::Sampled { n_coalitions: 256, seed: 0 },
        )
        .unwrap();
        assert_eq!(exp.n_rows, 19);
        assert_eq!(exp.n_cols, 4);
        assert_eq!(exp.phi.len(), 76);
        assert_eq!(exp.feature_names, ["HR", "EDA", "RSP-amp", "RSP-rate"]);
        let total: f64 = exp.phi.iter().sum();
        assert!((exp.base_value + total - exp.predicted).abs() < 1e-9);
    }

    #[test]
    fn per_cell_explanation_matches_feature_grid() {
        let model = toy_model(ModelKind::Attnmil, FeatureMode::Change, 4);
        let bag = random_bag(FeatureMode::Change, 0, 2);
        let background = background_from_bags(&[random_bag(FeatureMode::Change, 1, 5)]).unwrap();
        let exp = explain_window(
            &model,
            &bag,
            &background,
            Grouping::Cell,
            ShapMode::Sampled { n_coalitions: 400, seed: 1 },
        )
        .unwrap();
        assert_eq!(exp.n_rows, 19);
        assert_eq!(exp.n_cols, 8);
        assert_eq!(exp.feature_names.len(), 8);
    }

    #[test]
    fn explanation_round_trips_through_json() {
        let model = toy_model(ModelKind::Dnn, FeatureMode::Change, 5);
        let bag = random_bag(FeatureMode::Change, 1, 6);
        let background = background_from_bags(&[bag.clone()]).unwrap();
        let exp = explain_window(
            &model,
            &bag,
            &background,
            Grouping::ModalityTimestep,
            ShapMode::Sampled { n_coalitions: 256, seed: 2 },
        )
        .unwrap();
        let json = serde_json::to_string(&exp).unwrap();
        let back: ShapExplanation = serde_json::from_str(&json).unwrap();
        assert_eq!(back.phi, exp.phi);
        assert_eq!(back.window_id, exp.window_id);
        assert_eq!(back.base_value, exp.base_value);
    }

    fn fake_explanation(label: u8, predicted: f64, phi: Vec<f64>) -> ShapExplanation {
        ShapExplanation {
            window_id: format!("w{label}"),
            participant_id: "p1".into(),
            true_label: label,
            base_value: 0.5,
            predicted,
            n_rows: 1,
            n_cols: phi.len(),
            feature_names: (0..phi.len()).map(|i| format!("f{i}")).collect(),
            phi,
        }
    }

    #[test]
    fn global_importance_averages_and_filters() {
        let a = fake_explanation(1, 0.9, vec![1.0, -2.0]);
        let b = fake_explanation(1, 0.8, vec![-1.0, 2.0]);
        // Single explanation: the grid is just its phi.
        let single = global_importance(&[a.clone()], 1).unwrap();
        assert_eq!(single.grid, a.phi);
        assert_eq!(single.n_windows, 1);
        // phi and -phi average to zero.
        let both = global_importance(&[a.clone(), b], 1).unwrap();
        assert!(both.grid.iter().all(|v| v.abs() < 1e-12));
        // A misclassified window (label 1 predicted below threshold) is
        // excluded, leaving the grid unchanged.
        let wrong = fake_explanation(1, 0.2, vec![100.0, 100.0]);
        let filtered = global_importance(&[a.clone(), wrong], 1).unwrap();
        assert_eq!(filtered.grid, a.phi);
        assert_eq!(filtered.n_windows, 1);
    }

    #[test]
    fn global_importance_errors_name_the_class() {
        let a = fake_explanation(1, 0.9, vec![1.0]);
        let err = global_importance(&[a.clone()], 0).unwrap_err();
        assert!(err.to_string().contains("CWNS"), "{err}");
        let err = global_importance(&[fake_explanation(1, 0.2, vec![1.0])], 1).unwrap_err();
        assert!(err.to_string().contains("CWS"), "{err}");
        assert!(global_importance(&[a], 2).is_err());
    }

    #[test]
    fn background_is_the_per_feature_mean() {
        let bags = vec![random_bag(FeatureMode::Raw, 0, 1), random_bag(FeatureMode::Raw, 1, 2)];
        let bg = background_from_bags(&bags).unwrap();
        assert_eq!(bg.n_rows, 19);
        assert_eq!(bg.n_cols, 24);
        // Hand-check one column.
        let mut sum = 0.0;
        for bag in &bags {
            let g = bag.concat();
            for r in 0..g.n_rows {
                sum += g.get(r, 3);
            }
        }
        let expected = sum / 38.0;
        for r in 0..19 {
            assert!((bg.get(r, 3) - expected).abs() < 1e-12);
        }
        assert!(background_from_bags(&[]).is_err());
        let mixed = vec![random_bag(FeatureMode::Raw, 0, 1), random_bag(FeatureMode::Change, 0, 1)];
        assert!(background_from_bags(&mixed).is_err());
    }

    #[test]
    fn feature_mode_mismatch_is_rejected() {
        let model = toy_model(ModelKind::Mimil, FeatureMode::Raw, 1);
        let bag = random_bag(FeatureMode::Change, 0, 1);
        let background = background_from_bags(&[bag.clone()]).unwrap();
        let mode = ShapMode::Sampled { n_coalitions: 256, seed: 0 };
        assert!(explain_window(&model, &bag, &background, Grouping::Cell, mode).is_err());
    }
}
