//! Baseline classifiers: attention-MIL over concatenated modalities, a
//! flat supervised DNN, and instance-level max pooling.
//!
//! The attention-MIL and DNN baselines replace the original batch
//! normalization with per-row layer normalization: training here runs one bag
//! at a time, which makes batch statistics degenerate.

use super::ForwardMode;
use crate::features::{FeatureMatrix, FeatureMode};
use crate::nn::{sigmoid, NodeId, ParameterStore, Tape, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

const ATTN_EMBED_DIMS: [usize; 3] = [200, 64, 128];
const ATTN_L: usize = 64;
const ATTN_CLF_HIDDEN: usize = 64;
const DNN_DIMS: [usize; 2] = [512, 128];
const INSTMAX_HIDDEN: usize = 64;

pub fn init_attention_mil(feature_mode: FeatureMode, rng: &mut Rng) -> Result<ParameterStore> {
    let d = feature_mode.n_cols();
    let mut store = ParameterStore::new();
    let mut d_in = d;
    for (i, &d_out) in ATTN_EMBED_DIMS.iter().enumerate() {
        store.insert(&format!("embed/w{}", i + 1), Tensor::xavier(d_in, d_out, rng))?;
        store.insert(&format!("embed/b{}", i + 1), Tensor::zeros(vec![d_out]))?;
        d_in = d_out;
    }
    let p = ATTN_EMBED_DIMS[2];
    store.insert("attn/v", Tensor::xavier(ATTN_L, p, rng))?;
    store.insert("attn/w", Tensor::xavier(ATTN_L, 1, rng))?;
    store.insert("clf/w1", Tensor::xavier(p, ATTN_CLF_HIDDEN, rng))?;
    store.insert("clf/b1", Tensor::zeros(vec![ATTN_CLF_HIDDEN]))?;
    store.insert("clf/w2", Tensor::xavier(ATTN_CLF_HIDDEN, 1, rng))?;
    store.insert("clf/b2", Tensor::zeros(vec![1]))?;
    Ok(store)
}

pub fn init_dnn(feature_mode: FeatureMode, rng: &mut Rng) -> Result<ParameterStore> {
    let d_flat = 19 * feature_mode.n_cols();
    let mut store = ParameterStore::new();
    let mut d_in = d_flat;
    for (i, &d_out) in DNN_DIMS.iter().enumerate() {
        store.insert(&format!("dnn/w{}", i + 1), Tensor::xavier(d_in, d_out, rng))?;
        store.insert(&format!("dnn/b{}", i + 1), Tensor::zeros(vec![d_out]))?;
        d_in = d_out;
    }
    store.insert("dnn/w3", Tensor::xavier(d_in, 1, rng))?;
    store.insert("dnn/b3", Tensor::zeros(vec![1]))?;
    Ok(store)
}

pub fn init_instance_max(feature_mode: FeatureMode, rng: &mut Rng) -> Result<ParameterStore> {
    let d = feature_mode.n_cols();
    let mut store = ParameterStore::new();
    store.insert("inst/w1", Tensor::xavier(d, INSTMAX_HIDDEN, rng))?;
    store.insert("inst/b1", Tensor::zeros(vec![INSTMAX_HIDDEN]))?;
    store.insert("inst/w2", Tensor::xavier(INSTMAX_HIDDEN, 1, rng))?;
    store.insert("inst/b2", Tensor::zeros(vec![1]))?;
    Ok(store)
}

/// Attention-MIL graph: shared embedding over full 24- (or 8-) dim instances,
/// one Eq.-1-style attention pool, two-layer tanh classifier head.
/// Returns (logit, attention 1 x 19).
pub(super) fn attention_mil_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    grid: &FeatureMatrix,
    mode: ForwardMode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<(NodeId, NodeId)> {
    let x = tape.input(grid.n_rows, grid.n_cols, grid.data.clone())?;
    let mut h = x;
    for i in 1..=ATTN_EMBED_DIMS.len() {
        let w = tape.param(store, &format!("embed/w{i}"))?;
        let b = tape.param(store, &format!("embed/b{i}"))?;
        h = tape.linear(h, w, b)?;
        if i == 2 {
            h = tape.layer_norm_rows(h);
        }
        h = tape.relu(h);
        if i == 1 {
            h = tape.dropout(h, dropout, mode == ForwardMode::Train, rng)?;
        }
    }
    let v = tape.param(store, "attn/v")?;
    let w_attn = tape.param(store, "attn/w")?;
    // scores = w^T tanh(V E^T), softmaxed over instances
    let et = tape.transpose(h);
    let ve = tape.matmul(v, et)?;
    let th = tape.tanh(ve);
    let wt = tape.transpose(w_attn);
    let s = tape.matmul(wt, th)?;
    let a = tape.softmax_rows(s);
    let pooled = tape.matmul(a, h)?; // 1 x 128
    let w1 = tape.param(store, "clf/w1")?;
    let b1 = tape.param(store, "clf/b1")?;
    let h1 = tape.linear(pooled, w1, b1)?;
    let h1 = tape.tanh(h1);
    let w2 = tape.param(store, "clf/w2")?;
    let b2 = tape.param(store, "clf/b2")?;
    let logit = tape.linear(h1, w2, b2)?;
    Ok((logit, a))
}

/// Flat supervised baseline: the whole 19 x D grid as one 19*D vector.
pub(super) fn dnn_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    grid: &FeatureMatrix,
) -> Result<NodeId> {
    let expected = store.get("dnn/w1")?.shape[0];
    if grid.n_rows * grid.n_cols != expected {
        return Err(Error::shape(
            format!("{expected} flattened features"),
            format!("{}x{} = {}", grid.n_rows, grid.n_cols, grid.n_rows * grid.n_cols),
        ));
    }
    let x = tape.input(1, expected, grid.data.clone())?;
    let mut h = x;
    for i in 1..=DNN_DIMS.len() {
        let w = tape.param(store, &format!("dnn/w{i}"))?;
        let b = tape.param(store, &format!("dnn/b{i}"))?;
        h = tape.linear(h, w, b)?;
        h = tape.relu(h);
    }
    h = tape.layer_norm_rows(h);
    let w3 = tape.param(store, "dnn/w3")?;
    let b3 = tape.param(store, "dnn/b3")?;
    tape.linear(h, w3, b3)
}

/// Instance-based MIL: score each instance independently, bag logit = max.
pub(super) fn instance_max_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    grid: &FeatureMatrix,
) -> Result<NodeId> {
    let x = tape.input(grid.n_rows, grid.n_cols, grid.data.clone())?;
    let w1 = tape.param(store, "inst/w1")?;
    let b1 = tape.param(store, "inst/b1")?;
    let h = tape.linear(x, w1, b1)?;
    let h = tape.relu(h);
    let w2 = tape.param(store, "inst/w2")?;
    let b2 = tape.param(store, "inst/b2")?;
    let logits = tape.linear(h, w2, b2)?; // 19 x 1
    Ok(tape.max_all(logits))
}

/// Eval-mode attention-MIL forward: (probability, instance attention).
pub fn attention_mil_forward(
    store: &ParameterStore,
    grid: &FeatureMatrix,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = crate::rng::rng_from_seed(0);
    let mut tape = Tape::new();
    let (logit, a) = attention_mil_graph(&mut tape, store, grid, ForwardMode::Eval, 0.0, &mut rng)?;
    Ok((sigmoid(tape.scalar(logit)?), tape.value(a).to_vec()))
}

/// Eval-mode DNN forward.
pub fn dnn_forward(store: &ParameterStore, grid: &FeatureMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let logit = dnn_graph(&mut tape, store, grid)?;
    Ok(sigmoid(tape.scalar(logit)?))
}

/// Eval-mode instance-max forward with the trained instance scorer.
pub fn instance_max_forward(store: &ParameterStore, grid: &FeatureMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let logit = instance_max_graph(&mut tape, store, grid)?;
    Ok(sigmoid(tape.scalar(logit)?))
}

/// Bag probability as the maximum of per-instance probabilities from an
/// arbitrary scorer ("Y = max(y_i)" at score level).
pub fn instance_max_predict<F>(grid: &FeatureMatrix, mut instance_scorer: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if grid.n_rows == 0 {
        return Err(Error::Data("bag with no instances".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for r in 0..grid.n_rows {
        best = best.max(instance_scorer(grid.row(r)));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::random_bag;
    use crate::rng::rng_from_seed;

    #[test]
    fn attention_mil_invariants() {
        let store = init_attention_mil(FeatureMode::Raw, &mut rng_from_seed(2)).unwrap();
        let bag = random_bag(FeatureMode::Raw, 1, 5);
        let grid = bag.concat();
        let (p, a) = attention_mil_forward(&store, &grid).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(a.len(), 19);
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(a.iter().all(|&x| x >= 0.0));

        let order: Vec<usize> = (0..19).rev().collect();
        let permuted = bag.permute_instances(&order).unwrap();
        let (pp, _) = attention_mil_forward(&store, &permuted.concat()).unwrap();
        assert!((p - pp).abs() < 1e-6, "{p} vs {pp}");
    }

    #[test]
    fn dnn_is_not_permutation_invariant() {
        let store = init_dnn(FeatureMode::Raw, &mut rng_from_seed(3)).unwrap();
        let bag = random_bag(FeatureMode::Raw, 1, 6);
        let p = dnn_forward(&store, &bag.concat()).unwrap();
        assert!(p > 0.0 && p < 1.0);
        // Some permutation moves the output by more than 1e-3.
        let mut moved = false;
        for swap in 0..10 {
            let mut order: Vec<usize> = (0..19).collect();
            order.swap(swap, 18 - swap);
            order.rotate_left(swap + 1);
            let permuted = bag.permute_instances(&order).unwrap();
            let pp = dnn_forward(&store, &permuted.concat()).unwrap();
            if (p - pp).abs() > 1e-3 {
                moved = true;
                break;
            }
        }
        assert!(moved, "dnn output never moved under permutation");
    }

    #[test]
    fn dnn_zero_weights_is_half() {
        let mut store = init_dnn(FeatureMode::Raw, &mut rng_from_seed(3)).unwrap();
        for t in store.params.values_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let bag = random_bag(FeatureMode::Raw, 0, 7);
        assert_eq!(dnn_forward(&store, &bag.concat()).unwrap(), 0.5);
    }

    #[test]
    fn dnn_rejects_wrong_width() {
        let store = init_dnn(FeatureMode::Raw, &mut rng_from_seed(3)).unwrap();
        let bag = random_bag(FeatureMode::Change, 0, 7);
        assert!(dnn_forward(&store, &bag.concat()).is_err());
    }

    #[test]
    fn instance_max_predict_trivia() {
        let grid = FeatureMatrix { n_rows: 19, n_cols: 1, data: vec![0.0; 19] };
        let p = instance_max_predict(&grid, |_| 0.1).unwrap();
        assert_eq!(p, 0.1);

        let mut grid = FeatureMatrix { n_rows: 19, n_cols: 1, data: vec![0.0; 19] };
        grid.set(8, 0, 1.0);
        let scores: Vec<f64> = (0..19).map(|i| if i == 8 { 0.9 } else { 0.1 }).collect();
        let p = instance_max_predict(&grid, |row| if row[0] == 1.0 { 0.9 } else { 0.1 }).unwrap();
        assert_eq!(p, 0.9);
        assert!(scores.iter().all(|&s| p >= s - 1e-12));
        assert!(p <= scores.iter().cloned().fold(f64::MIN, f64::max) + 1e-12);
    }

    #[test]
    fn instance_max_model_bag_score_bounds_instances() {
        let store = init_instance_max(FeatureMode::Raw, &mut rng_from_seed(4)).unwrap();
        let bag = random_bag(FeatureMode::Raw, 1, 9);
        let grid = bag.concat();
        let p = instance_max_forward(&store, &grid).unwrap();
        // score each instance alone and compare
        for r in 0..19 {
            let row = FeatureMatrix { n_rows: 1, n_cols: grid.n_cols, data: grid.row(r).to_vec() };
            let pi = instance_max_forward(&store, &row).unwrap();
            assert!(p >= pi - 1e-12);
        }
    }
}
