//! The MI-MIL architecture: per-modality embedding, per-modality attention
//! pooling, non-local modality fusion, and the sigmoid classifier head.

use super::{ForwardMode, ModalityBag};
use crate::features::{FeatureMatrix, FeatureMode};
use crate::nn::{sigmoid, NodeId, ParameterStore, Tape, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Instance embedding dimensionality p (= L = M = fusion position count N).
pub const EMBED_DIM: usize = 256;
/// Hidden width of the first embedding layer.
const EMBED_HIDDEN: usize = 128;
/// Modality channels entering fusion.
const CHANNELS: usize = 4;
/// Channels after the pointwise channel maps.
pub const FUSION_CHANNELS: usize = 2;
/// Classifier widths after flattening the fused representation.
const CLF_DIMS: [usize; 3] = [256, 64, 1];

/// Attention-pooled modality summaries and their attention weights.
#[derive(Debug, Clone)]
pub struct BagEmbedding {
    /// One p-vector per modality, canonical order.
    pub t_m: [Vec<f64>; 4],
    /// One weight per instance per modality; each sums to 1.
    pub attention: [Vec<f64>; 4],
}

/// The modality-invariant representation Z (FUSION_CHANNELS x EMBED_DIM,
/// row-major).
#[derive(Debug, Clone)]
pub struct FusedRepresentation {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MimilOutput {
    pub probability: f64,
    pub embedding: BagEmbedding,
    pub fused: FusedRepresentation,
}

/// Fresh Xavier-initialized MI-MIL parameters for `feature_mode` instances.
pub fn init_mimil(feature_mode: FeatureMode, rng: &mut Rng) -> Result<ParameterStore> {
    let d = feature_mode.modality_dim();
    let mut store = ParameterStore::new();
    for m in 0..4 {
        store.insert(&format!("embed{m}/w1"), Tensor::xavier(d, EMBED_HIDDEN, rng))?;
        store.insert(&format!("embed{m}/b1"), Tensor::zeros(vec![EMBED_HIDDEN]))?;
        store.insert(&format!("embed{m}/w2"), Tensor::xavier(EMBED_HIDDEN, EMBED_DIM, rng))?;
        store.insert(&format!("embed{m}/b2"), Tensor::zeros(vec![EMBED_DIM]))?;
        store.insert(&format!("attn{m}/v"), Tensor::xavier(EMBED_DIM, EMBED_DIM, rng))?;
        store.insert(&format!("attn{m}/w"), Tensor::xavier(EMBED_DIM, 1, rng))?;
    }
    for name in ["theta", "phi", "g"] {
        store.insert(
            &format!("fusion/{name}_w"),
            Tensor::xavier(FUSION_CHANNELS, CHANNELS, rng),
        )?;
        store.insert(&format!("fusion/{name}_b"), Tensor::zeros(vec![FUSION_CHANNELS]))?;
    }
    let mut d_in = FUSION_CHANNELS * EMBED_DIM;
    for (i, &d_out) in CLF_DIMS.iter().enumerate() {
        store.insert(&format!("clf/w{}", i + 1), Tensor::xavier(d_in, d_out, rng))?;
        store.insert(&format!("clf/b{}", i + 1), Tensor::zeros(vec![d_out]))?;
        d_in = d_out;
    }
    Ok(store)
}

/// Tape-level embedding block for modality `m`: linear(d->128) + ReLU +
/// dropout + linear(128->256), applied per instance.
fn embed_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    x: NodeId,
    m: usize,
    mode: ForwardMode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    let w1 = tape.param(store, &format!("embed{m}/w1"))?;
    let b1 = tape.param(store, &format!("embed{m}/b1"))?;
    let w2 = tape.param(store, &format!("embed{m}/w2"))?;
    let b2 = tape.param(store, &format!("embed{m}/b2"))?;
    let h = tape.linear(x, w1, b1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout, mode == ForwardMode::Train, rng)?;
    tape.linear(h, w2, b2)
}

/// Tape-level Eq. 1 pooling: scores w^T tanh(V E^T), softmax over instances,
/// weighted sum of embeddings. Returns (attention 1 x k, summary 1 x p).
fn attention_pool_graph(
    tape: &mut Tape,
    e: NodeId,
    v: NodeId,
    w: NodeId,
) -> Result<(NodeId, NodeId)> {
    let et = tape.transpose(e); // p x k
    let ve = tape.matmul(v, et)?; // L x k
    let th = tape.tanh(ve);
    let wt = tape.transpose(w); // 1 x L
    let scores = tape.matmul(wt, th)?; // 1 x k
    let a = tape.softmax_rows(scores);
    let t_m = tape.matmul(a, e)?; // 1 x p
    Ok((a, t_m))
}

/// Tape-level Eq. 2 fusion over the stacked summaries T (4 x N): pointwise
/// channel maps to theta/phi/g, position-pair attention softmaxed over j,
/// Z[:, i] = sum_j A[i, j] g[:, j]. Returns (A: N x N, Z: 2 x N).
fn fusion_graph(tape: &mut Tape, store: &ParameterStore, t: NodeId) -> Result<(NodeId, NodeId)> {
    let mut maps = Vec::with_capacity(3);
    for name in ["theta", "phi", "g"] {
        let w = tape.param(store, &format!("fusion/{name}_w"))?;
        let b = tape.param(store, &format!("fusion/{name}_b"))?;
        maps.push(tape.pointwise_conv(t, w, b)?); // 2 x N
    }
    let (theta, phi, g) = (maps[0], maps[1], maps[2]);
    let theta_t = tape.transpose(theta); // N x 2
    let logits = tape.matmul(theta_t, phi)?; // N x N, [i][j] = theta_i . phi_j
    let a = tape.softmax_rows(logits);
    let a_t = tape.transpose(a);
    let z = tape.matmul(g, a_t)?; // 2 x N
    Ok((a, z))
}

/// Tape-level classifier head over the flattened Z.
fn classify_graph(tape: &mut Tape, store: &ParameterStore, z: NodeId) -> Result<NodeId> {
    let (zr, zc) = tape.shape(z);
    let mut h = tape.reshape(z, 1, zr * zc)?;
    for i in 1..=CLF_DIMS.len() {
        let w = tape.param(store, &format!("clf/w{i}"))?;
        let b = tape.param(store, &format!("clf/b{i}"))?;
        h = tape.linear(h, w, b)?;
        if i < CLF_DIMS.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

pub(super) struct MimilGraph {
    pub logit: NodeId,
    pub attentions: [NodeId; 4],
    pub t_m: [NodeId; 4],
    pub z: NodeId,
}

/// Full MI-MIL forward graph over a z-scored concatenated grid (19 x 24|8).
pub(super) fn mimil_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    grid: &FeatureMatrix,
    mode: ForwardMode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<MimilGraph> {
    if grid.n_cols % 4 != 0 {
        return Err(Error::shape("4m feature columns", format!("{}", grid.n_cols)));
    }
    let d = grid.n_cols / 4;
    let mut attentions = [NodeId::default(); 4];
    let mut summaries = [NodeId::default(); 4];
    for m in 0..4 {
        let mut cols = Vec::with_capacity(grid.n_rows * d);
        for r in 0..grid.n_rows {
            cols.extend_from_slice(&grid.row(r)[m * d..(m + 1) * d]);
        }
        let x = tape.input(grid.n_rows, d, cols)?;
        let e = embed_graph(tape, store, x, m, mode, dropout, rng)?;
        let v = tape.param(store, &format!("attn{m}/v"))?;
        let w_raw = tape.param(store, &format!("attn{m}/w"))?;
        // attn/w is stored rank-2 (L x 1); param() keeps it L x 1 already.
        let (a, t_m) = attention_pool_graph(tape, e, v, w_raw)?;
        attentions[m] = a;
        summaries[m] = t_m;
    }
    let t = tape.concat_rows(&summaries)?; // 4 x p
    let (_a, z) = fusion_graph(tape, store, t)?;
    let logit = classify_graph(tape, store, z)?;
    Ok(MimilGraph { logit, attentions, t_m: summaries, z })
}

/// Embeds one modality bag (eval mode unless `mode` says otherwise).
pub fn embed_modality(
    bag_m: &ModalityBag,
    store: &ParameterStore,
    mode: ForwardMode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    let m = bag_m.modality.index();
    let inst = &bag_m.instances;
    let mut tape = Tape::new();
    let x = tape.input(inst.n_rows, inst.n_cols, inst.data.clone())?;
    let e = embed_graph(&mut tape, store, x, m, mode, dropout, rng)?;
    let (rows, cols) = tape.shape(e);
    Ok(FeatureMatrix { n_rows: rows, n_cols: cols, data: tape.value(e).to_vec() })
}

/// Eq. 1 pooling over an embedding matrix E (k x p) with V (L x p) and
/// w (L x 1). Returns (attention weights, pooled t_m).
pub fn attention_pool(e: &FeatureMatrix, v: &Tensor, w: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut store = ParameterStore::new();
    store.insert("v", v.clone())?;
    store.insert("w", w.clone())?;
    let mut tape = Tape::new();
    let en = tape.input(e.n_rows, e.n_cols, e.data.clone())?;
    let vn = tape.param(&store, "v")?;
    let wn = tape.param(&store, "w")?;
    let wn = if tape.shape(wn).0 == 1 { tape.transpose(wn) } else { wn };
    let (a, t_m) = attention_pool_graph(&mut tape, en, vn, wn)?;
    Ok((tape.value(a).to_vec(), tape.value(t_m).to_vec()))
}

/// Eq. 2 fusion of stacked modality summaries T (4 x N) using the fusion
/// parameters in `store`. Returns the position-attention matrix A (N x N)
/// and the fused representation Z.
pub fn modality_fusion(
    t_stack: &FeatureMatrix,
    store: &ParameterStore,
) -> Result<(FeatureMatrix, FusedRepresentation)> {
    if t_stack.n_rows != CHANNELS {
        return Err(Error::shape(
            format!("{CHANNELS} stacked modality rows"),
            format!("{}", t_stack.n_rows),
        ));
    }
    let mut tape = Tape::new();
    let t = tape.input(t_stack.n_rows, t_stack.n_cols, t_stack.data.clone())?;
    let (a, z) = fusion_graph(&mut tape, store, t)?;
    let (ar, ac) = tape.shape(a);
    Ok((
        FeatureMatrix { n_rows: ar, n_cols: ac, data: tape.value(a).to_vec() },
        FusedRepresentation { z: tape.value(z).to_vec() },
    ))
}

/// Classifier head probability for a fused representation.
pub fn classify(fused: &FusedRepresentation, store: &ParameterStore) -> Result<f64> {
    let mut tape = Tape::new();
    let n = fused.z.len() / FUSION_CHANNELS;
    let z = tape.input(FUSION_CHANNELS, n, fused.z.clone())?;
    let logit = classify_graph(&mut tape, store, z)?;
    Ok(sigmoid(tape.scalar(logit)?))
}

/// Eval-mode MI-MIL forward over a z-scored concatenated grid, returning the
/// probability plus the diagnostics used by the explainer and stream output.
pub fn mimil_forward(store: &ParameterStore, grid: &FeatureMatrix) -> Result<MimilOutput> {
    let mut rng = crate::rng::rng_from_seed(0); // dropout inactive in eval mode
    let mut tape = Tape::new();
    let graph = mimil_graph(&mut tape, store, grid, ForwardMode::Eval, 0.0, &mut rng)?;
    let probability = sigmoid(tape.scalar(graph.logit)?);
    let attention = graph.attentions.map(|a| tape.value(a).to_vec());
    let t_m = graph.t_m.map(|t| tape.value(t).to_vec());
    Ok(MimilOutput {
        probability,
        embedding: BagEmbedding { t_m, attention },
        fused: FusedRepresentation { z: tape.value(graph.z).to_vec() },
    })
}
