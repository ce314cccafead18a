//! MI-MIL and baseline classifiers, the training loop, and ridge ranking.

mod baselines;
mod mimil;
mod ridge;
mod train;

pub use baselines::{
    attention_mil_forward, dnn_forward, init_attention_mil, init_dnn, init_instance_max,
    instance_max_forward, instance_max_predict,
};
pub use mimil::{
    attention_pool, classify, embed_modality, init_mimil, mimil_forward, modality_fusion,
    BagEmbedding, FusedRepresentation, MimilOutput, EMBED_DIM, FUSION_CHANNELS,
};
pub use ridge::ridge_rank;
pub use train::{gradient_check, train, EpochStats, TrainConfig};

use crate::features::{BagRecord, FeatureMatrix, FeatureMode, Modality};
use crate::nn::{load_weights, save_weights, sigmoid, ParameterStore, Tape};
use crate::rng::Rng;
use crate::signal::Condition;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The 19 instances of one modality within a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBag {
    pub modality: Modality,
    /// 19 x d, temporal order preserved (d = 6 raw/delta HLDs or 2 change scores).
    pub instances: FeatureMatrix,
}

/// One labeled window: four modality bags over the same 19 segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub participant_id: String,
    pub window_id: String,
    pub condition: Condition,
    /// 0 = CWNS, 1 = CWS.
    pub label: u8,
    pub feature_mode: FeatureMode,
    pub modalities: [ModalityBag; 4],
}

impl Bag {
    pub fn from_record(record: &BagRecord) -> Result<Bag> {
        record.validate()?;
        let grid = record.grid();
        let modalities = Modality::ALL.map(|m| {
            let cols = record.feature_mode.modality_columns(m);
            let d = cols.len();
            let mut instances = FeatureMatrix::zeros(grid.n_rows, d);
            for r in 0..grid.n_rows {
                for (j, c) in cols.clone().enumerate() {
                    instances.set(r, j, grid.get(r, c));
                }
            }
            ModalityBag { modality: m, instances }
        });
        Ok(Bag {
            participant_id: record.participant_id.clone(),
            window_id: record.window_id.clone(),
            condition: record.condition,
            label: record.label,
            feature_mode: record.feature_mode,
            modalities,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.modalities[0].instances.n_rows
    }

    /// Instances concatenated across modalities in canonical column order
    /// (19 x 24 or 19 x 8).
    pub fn concat(&self) -> FeatureMatrix {
        let rows = self.n_instances();
        let cols = self.feature_mode.n_cols();
        let mut out = FeatureMatrix::zeros(rows, cols);
        for mb in &self.modalities {
            let range = self.feature_mode.modality_columns(mb.modality);
            for r in 0..rows {
                for (j, c) in range.clone().enumerate() {
                    out.set(r, c, mb.instances.get(r, j));
                }
            }
        }
        out
    }

    /// Reorders the 19 instances identically across all modalities.
    pub fn permute_instances(&self, order: &[usize]) -> Result<Bag> {
        let rows = self.n_instances();
        if order.len() != rows {
            return Err(Error::Parameter(format!(
                "permutation of {} entries for {} instances",
                order.len(),
                rows
            )));
        }
        let mut out = self.clone();
        for (mi, mb) in self.modalities.iter().enumerate() {
            let d = mb.instances.n_cols;
            for (new_row, &src) in order.iter().enumerate() {
                for j in 0..d {
                    out.modalities[mi].instances.set(new_row, j, mb.instances.get(src, j));
                }
            }
        }
        Ok(out)
    }
}

/// Per-column standardization statistics, fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Fits over every instance row of every bag (columns in canonical
    /// concatenated order).
    pub fn fit(bags: &[Bag]) -> Result<ZScore> {
        let first = bags.first().ok_or_else(|| Error::Data("no bags to fit z-score".into()))?;
        let cols = first.feature_mode.n_cols();
        let mut sum = vec![0.0; cols];
        let mut sum_sq = vec![0.0; cols];
        let mut n = 0usize;
        for bag in bags {
            let grid = bag.concat();
            for r in 0..grid.n_rows {
                for c in 0..cols {
                    let v = grid.get(r, c);
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n as f64 - m * m).max(0.0).sqrt())
            .collect();
        Ok(ZScore { mean, std })
    }

    /// Standardizes a concatenated 19 x D grid; constant columns pass through
    /// centered only.
    pub fn apply(&self, grid: &FeatureMatrix) -> Result<FeatureMatrix> {
        if grid.n_cols != self.mean.len() {
            return Err(Error::shape(
                format!("{} feature columns", self.mean.len()),
                format!("{}", grid.n_cols),
            ));
        }
        let mut out = grid.clone();
        for r in 0..grid.n_rows {
            for c in 0..grid.n_cols {
                let s = if self.std[c] > 1e-12 { self.std[c] } else { 1.0 };
                out.set(r, c, (grid.get(r, c) - self.mean[c]) / s);
            }
        }
        Ok(out)
    }
}

/// Model architecture identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mimil,
    Attnmil,
    Instmax,
    Dnn,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mimil" => Ok(ModelKind::Mimil),
            "attnmil" => Ok(ModelKind::Attnmil),
            "instmax" => Ok(ModelKind::Instmax),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(Error::Parameter(format!(
                "unknown model `{other}` (expected mimil|attnmil|instmax|dnn)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mimil => "mimil",
            ModelKind::Attnmil => "attnmil",
            ModelKind::Instmax => "instmax",
            ModelKind::Dnn => "dnn",
        }
    }

    /// Fresh Xavier-initialized parameters for this architecture.
    pub fn init(self, feature_mode: FeatureMode, rng: &mut Rng) -> Result<ParameterStore> {
        match self {
            ModelKind::Mimil => init_mimil(feature_mode, rng),
            ModelKind::Attnmil => init_attention_mil(feature_mode, rng),
            ModelKind::Instmax => init_instance_max(feature_mode, rng),
            ModelKind::Dnn => init_dnn(feature_mode, rng),
        }
    }
}

/// Whether a forward pass samples dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// The tape-level graph of one bag forward: the logit plus any attention
/// vectors the architecture exposes (one per modality for MI-MIL, one shared
/// for attention-MIL, none for DNN/instance-max).
pub struct BagGraph {
    pub logit: crate::nn::NodeId,
    pub attentions: Vec<crate::nn::NodeId>,
}

/// Builds the forward graph of `kind` for one z-scored concatenated grid.
pub fn build_graph(
    kind: ModelKind,
    tape: &mut Tape,
    store: &ParameterStore,
    grid: &FeatureMatrix,
    mode: ForwardMode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<BagGraph> {
    match kind {
        ModelKind::Mimil => mimil::mimil_graph(tape, store, grid, mode, dropout, rng)
            .map(|g| BagGraph { logit: g.logit, attentions: g.attentions.to_vec() }),
        ModelKind::Attnmil => baselines::attention_mil_graph(tape, store, grid, mode, dropout, rng)
            .map(|(logit, attn)| BagGraph { logit, attentions: vec![attn] }),
        ModelKind::Instmax => baselines::instance_max_graph(tape, store, grid)
            .map(|logit| BagGraph { logit, attentions: vec![] }),
        ModelKind::Dnn => baselines::dnn_graph(tape, store, grid)
            .map(|logit| BagGraph { logit, attentions: vec![] }),
    }
}

/// A trained classifier: weights plus everything needed to reproduce its
/// predictions (z-score statistics, config echo, seed).
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub feature_mode: FeatureMode,
    pub store: ParameterStore,
    pub zscore: ZScore,
    pub config: TrainConfig,
    pub seed: u64,
}

/// JSON sidecar stored beside every weight file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub architecture: ModelKind,
    pub feature_mode: FeatureMode,
    pub zscore: ZScore,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TrainedModel {
    /// Probability and attention diagnostics for one bag (eval mode).
    pub fn predict(&self, bag: &Bag) -> Result<Prediction> {
        if bag.feature_mode != self.feature_mode {
            return Err(Error::Parameter(format!(
                "model expects {} features, bag {} carries {}",
                self.feature_mode.as_str(),
                bag.window_id,
                bag.feature_mode.as_str()
            )));
        }
        let grid = self.zscore.apply(&bag.concat())?;
        let mut tape = Tape::new();
        let mut rng = crate::rng::rng_from_seed(0); // unused in eval mode
        let graph = build_graph(
            self.kind,
            &mut tape,
            &self.store,
            &grid,
            ForwardMode::Eval,
            0.0,
            &mut rng,
        )?;
        let logit = tape.scalar(graph.logit)?;
        let attentions = graph
            .attentions
            .iter()
            .map(|&a| tape.value(a).to_vec())
            .collect();
        Ok(Prediction {
            probability: sigmoid(logit),
            attentions,
        })
    }

    /// Predicts from a raw (not yet z-scored) feature grid. This is the entry
    /// point perturbation-based explainers use: they mask features in the raw
    /// space and the model applies its own normalization.
    pub fn predict_grid(&self, grid: &FeatureMatrix) -> Result<f64> {
        let grid = self.zscore.apply(grid)?;
        let mut tape = Tape::new();
        let mut rng = crate::rng::rng_from_seed(0); // unused in eval mode
        let graph = build_graph(
            self.kind,
            &mut tape,
            &self.store,
            &grid,
            ForwardMode::Eval,
            0.0,
            &mut rng,
        )?;
        Ok(sigmoid(tape.scalar(graph.logit)?))
    }

    /// Writes `<stem>.miml` weights and `<stem>.json` sidecar. Quantizes the
    /// in-memory weights to the stored f32 grid (see the weight format).
    pub fn save(&mut self, stem: &Path) -> Result<()> {
        save_weights(&stem.with_extension("miml"), &mut self.store)?;
        let sidecar = ModelSidecar {
            architecture: self.kind,
            feature_mode: self.feature_mode,
            zscore: self.zscore.clone(),
            config: self.config.clone(),
            seed: self.seed,
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<TrainedModel> {
        let store = load_weights(&stem.with_extension("miml"))?;
        let json = std::fs::read_to_string(stem.with_extension("json"))?;
        let sidecar: ModelSidecar = serde_json::from_str(&json)?;
        Ok(TrainedModel {
            kind: sidecar.architecture,
            feature_mode: sidecar.feature_mode,
            store,
            zscore: sidecar.zscore,
            config: sidecar.config,
            seed: sidecar.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probability: f64,
    /// One weight vector per attention head the architecture exposes.
    pub attentions: Vec<Vec<f64>>,
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn bag_round_trips_through_modalities() {
        let bag = random_bag(FeatureMode::Raw, 1, 3);
        let grid = bag.concat();
        assert_eq!((grid.n_rows, grid.n_cols), (19, 24));
        // Column 7 is EDA's second HLD; check it landed in the EDA bag.
        assert_eq!(bag.modalities[1].modality, Modality::Eda);
        assert_eq!(bag.modalities[1].instances.get(4, 1), grid.get(4, 7));
    }

    #[test]
    fn zscore_standardizes_training_columns() {
        let bags: Vec<Bag> = (0..8).map(|s| random_bag(FeatureMode::Change, (s % 2) as u8, s)).collect();
        let z = ZScore::fit(&bags).unwrap();
        let mut sum = vec![0.0; 8];
        let mut sum_sq = vec![0.0; 8];
        let mut n = 0;
        for bag in &bags {
            let g = z.apply(&bag.concat()).unwrap();
            for r in 0..g.n_rows {
                for c in 0..8 {
                    sum[c] += g.get(r, c);
                    sum_sq[c] += g.get(r, c) * g.get(r, c);
                }
                n += 1;
            }
        }
        for c in 0..8 {
            let mean = sum[c] / n as f64;
            let var = sum_sq[c] / n as f64 - mean * mean;
            assert!(mean.abs() < 1e-9, "col {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "col {c} var {var}");
        }
    }

    #[test]
    fn permute_instances_moves_rows() {
        let bag = random_bag(FeatureMode::Raw, 0, 9);
        let order: Vec<usize> = (0..19).rev().collect();
        let p = bag.permute_instances(&order).unwrap();
        assert_eq!(p.modalities[0].instances.row(0), bag.modalities[0].instances.row(18));
        assert!(bag.permute_instances(&[0, 1]).is_err());
    }
}
