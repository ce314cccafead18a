//! Reverse-mode differentiation over a flat tape of 2-D nodes.
//!
//! Every node is a (rows x cols) matrix; rank-1 parameters enter as 1 x n.
//! A graph is built per forward pass, values are computed eagerly at node
//! creation, and [`Tape::backward`] walks the tape once in reverse.

use super::tensor::ParameterStore;
use crate::rng::Rng;
use crate::{Error, Result};
use rand::Rng as _;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a 1 x cols vector to every row.
    AddRowVec(NodeId, NodeId),
    /// Broadcast-multiply a 1 x cols vector into every row.
    MulRowVec(NodeId, NodeId),
    /// Broadcast-add a 1 x rows vector down every column.
    AddColVec(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    /// Per-row standardization; caches 1/std per row for the backward pass.
    LayerNormRows(NodeId, Vec<f64>),
    /// Mask already folds in the 1/(1-p) inverted-dropout scale.
    Dropout(NodeId, Vec<f64>),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    /// Maximum over all elements; caches the argmax for gradient routing.
    MaxAll(NodeId, usize),
    SumAll(NodeId),
    /// Numerically stable BCE on a 1 x 1 logit against a fixed target.
    BceWithLogits(NodeId, f64),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id.0];
        if (n.rows, n.cols) != (1, 1) {
            return Err(Error::shape("1x1 scalar", format!("{}x{}", n.rows, n.cols)));
        }
        Ok(n.value[0])
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(self.push(Op::Input, rows, cols, data))
    }

    /// Brings a stored parameter onto the tape. Rank-1 tensors become 1 x n.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let t = store.get(name)?;
        let (rows, cols) = match t.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::shape(
                    format!("rank <= 2 parameter `{name}`"),
                    format!("shape {other:?}"),
                ))
            }
        };
        Ok(self.push(Op::Param(name.to_string()), rows, cols, t.data.clone()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape(
                format!("inner dimensions to agree ({ar}x{ac} . {br}x{bc})"),
                format!("{ac} vs {br}"),
            ));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; ar * bc];
        for i in 0..ar {
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * bc..(k + 1) * bc];
                let orow = &mut out[i * bc..(i + 1) * bc];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), ar, bc, out))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        self.push(Op::Transpose(a), c, r, out)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::shape(
                format!("matching shapes for {what}"),
                format!("{ar}x{ac} vs {br}x{bc}"),
            ));
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), r, c, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), r, c, out))
    }

    pub fn add_row_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (br, bc) != (1, c) {
            return Err(Error::shape(format!("1x{c} row vector"), format!("{br}x{bc}")));
        }
        let bv = self.nodes[b.0].value.clone();
        let out = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % c])
            .collect();
        Ok(self.push(Op::AddRowVec(a, b), r, c, out))
    }

    pub fn mul_row_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (br, bc) != (1, c) {
            return Err(Error::shape(format!("1x{c} row vector"), format!("{br}x{bc}")));
        }
        let bv = self.nodes[b.0].value.clone();
        let out = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv[i % c])
            .collect();
        Ok(self.push(Op::MulRowVec(a, b), r, c, out))
    }

    pub fn add_col_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (br, bc) != (1, r) {
            return Err(Error::shape(format!("1x{r} column-bias vector"), format!("{br}x{bc}")));
        }
        let bv = self.nodes[b.0].value.clone();
        let out = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i / c])
            .collect();
        Ok(self.push(Op::AddColVec(a, b), r, c, out))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        self.push(Op::Scale(a, factor), r, c, out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), r, c, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), r, c, out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), r, c, out)
    }

    /// Shift-invariant softmax along each row.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), r, c, out)
    }

    /// Standardizes each row to zero mean / unit variance (population).
    pub fn layer_norm_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv;
            }
        }
        self.push(Op::LayerNormRows(a, inv_std), r, c, out)
    }

    /// Inverted dropout. Train mode zeroes elements with probability `p` and
    /// scales survivors by 1/(1-p); eval mode is the identity.
    pub fn dropout(&mut self, a: NodeId, p: f64, train: bool, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout p={p} outside [0, 1)")));
        }
        let (r, c) = self.shape(a);
        if !train || p == 0.0 {
            let value = self.nodes[a.0].value.clone();
            let mask = vec![1.0; r * c];
            return Ok(self.push(Op::Dropout(a, mask), r, c, value));
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out = self.nodes[a.0].value.iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(self.push(Op::Dropout(a, mask), r, c, out))
    }

    /// Stacks equal-width nodes vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_rows of zero nodes".into()))?;
        let (_, cols) = self.shape(first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != cols {
                return Err(Error::shape(format!("{cols} columns"), format!("{pc} columns")));
            }
            rows += pr;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), rows, cols, out))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        if ar * ac != rows * cols {
            return Err(Error::shape(
                format!("{} elements for {rows}x{cols}", rows * cols),
                format!("{}", ar * ac),
            ));
        }
        let value = self.nodes[a.0].value.clone();
        Ok(self.push(Op::Reshape(a), rows, cols, value))
    }

    pub fn max_all(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (argmax, &max) = av
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.partial_cmp(y).expect("NaN in max_all"))
            .expect("max_all of empty node");
        self.push(Op::MaxAll(a, argmax), 1, 1, vec![max])
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total = self.nodes[a.0].value.iter().sum();
        self.push(Op::SumAll(a), 1, 1, vec![total])
    }

    /// BCE between `sigmoid(logit)` and the target, evaluated stably from the
    /// logit. Its gradient with respect to the logit is `sigmoid(logit) - y`.
    pub fn bce_with_logits(&mut self, logit: NodeId, y: f64) -> Result<NodeId> {
        let z = self.scalar(logit)?;
        let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        Ok(self.push(Op::BceWithLogits(logit, y), 1, 1, vec![loss]))
    }

    /// `x W + b`, the dense layer primitive.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_row_vec(y, b)
    }

    /// 1x1 convolution over positions: `y[:, n] = W x[:, n] + b` for
    /// x of C_in x N, W of C_out x C_in, bias of C_out.
    pub fn pointwise_conv(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(w, x)?;
        self.add_col_vec(y, b)
    }

    /// Accumulates d(root)/d(node) for every node. `root` must be scalar.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.scalar(root)?;
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.rows * n.cols])
            .collect();
        grads[root.0][0] = 1.0;

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ar, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    // dA = dY . B^T
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut s = 0.0;
                            for j in 0..bc {
                                s += g[i * bc + j] * bv[k * bc + j];
                            }
                            grads[a.0][i * ac + k] += s;
                        }
                    }
                    // dB = A^T . dY
                    for k in 0..ac {
                        for i in 0..ar {
                            let aik = av[i * ac + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..bc {
                                grads[b.0][k * bc + j] += aik * g[i * bc + j];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.rows, node.cols);
                    for i in 0..r {
                        for j in 0..c {
                            grads[a.0][j * r + i] += g[i * c + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (ga, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b.0].iter_mut().zip(&g) {
                        *gb += gi;
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * bv[i];
                        grads[b.0][i] += gi * av[i];
                    }
                }
                Op::AddRowVec(a, b) => {
                    let c = node.cols;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi;
                        grads[b.0][i % c] += gi;
                    }
                }
                Op::MulRowVec(a, b) => {
                    let c = node.cols;
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * bv[i % c];
                        grads[b.0][i % c] += gi * av[i];
                    }
                }
                Op::AddColVec(a, b) => {
                    let c = node.cols;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi;
                        grads[b.0][i / c] += gi;
                    }
                }
                Op::Scale(a, f) => {
                    for (ga, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gi * f;
                    }
                }
                Op::Relu(a) => {
                    let av = self.nodes[a.0].value.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        if av[i] > 0.0 {
                            grads[a.0][i] += gi;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let yv = &node.value;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = &node.value;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let yv = &node.value;
                    for i in 0..r {
                        let row = &yv[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let dot: f64 = row.iter().zip(grow).map(|(y, gy)| y * gy).sum();
                        for j in 0..c {
                            grads[a.0][i * c + j] += row[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::LayerNormRows(a, inv_std) => {
                    let (r, c) = (node.rows, node.cols);
                    let yv = &node.value;
                    for i in 0..r {
                        let y = &yv[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let mean_g: f64 = gy.iter().sum::<f64>() / c as f64;
                        let mean_gy: f64 =
                            gy.iter().zip(y).map(|(gi, yi)| gi * yi).sum::<f64>() / c as f64;
                        for j in 0..c {
                            grads[a.0][i * c + j] +=
                                inv_std[i] * (gy[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                }
                Op::Dropout(a, mask) => {
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * mask[i];
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        for (gp, &gi) in grads[p.0].iter_mut().zip(&g[offset..offset + len]) {
                            *gp += gi;
                        }
                        offset += len;
                    }
                }
                Op::Reshape(a) => {
                    for (ga, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                }
                Op::MaxAll(a, argmax) => {
                    grads[a.0][*argmax] += g[0];
                }
                Op::SumAll(a) => {
                    for ga in grads[a.0].iter_mut() {
                        *ga += g[0];
                    }
                }
                Op::BceWithLogits(a, y) => {
                    let z = self.nodes[a.0].value[0];
                    grads[a.0][0] += g[0] * (sigmoid(z) - y);
                }
            }
        }
        Ok(Gradients { values: grads })
    }

    /// Accumulates parameter gradients from a backward pass into the store.
    pub fn apply_grads(&self, grads: &Gradients, store: &mut ParameterStore) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                store.accumulate_grad(name, &grads.values[idx])?;
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn linear_identity_and_arithmetic() {
        let mut t = Tape::new();
        let x = t.input(1, 2, vec![1.0, 2.0]).unwrap();
        let w = t.input(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b0 = t.input(1, 2, vec![0.0, 0.0]).unwrap();
        let y = t.linear(x, w, b0).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0]);

        let b1 = t.input(1, 2, vec![1.0, 1.0]).unwrap();
        let y = t.linear(x, w, b1).unwrap();
        assert_eq!(t.value(y), &[2.0, 3.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_shapes() {
        let mut t = Tape::new();
        let x = t.input(1, 3, vec![0.0; 3]).unwrap();
        let w = t.input(2, 2, vec![0.0; 4]).unwrap();
        let err = t.matmul(x, w).unwrap_err().to_string();
        assert!(err.contains("1x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn pointwise_conv_identity_and_position_independence() {
        let mut t = Tape::new();
        let x = t.input(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let w = t.input(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = t.input(1, 2, vec![0.0, 0.0]).unwrap();
        let y = t.pointwise_conv(x, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));

        // Constant across positions in, constant across positions out.
        let xc = t.input(2, 3, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
        let wr = t.input(2, 2, vec![0.3, -0.7, 1.1, 0.4]).unwrap();
        let br = t.input(1, 2, vec![0.1, -0.2]).unwrap();
        let y = t.pointwise_conv(xc, wr, br).unwrap();
        let v = t.value(y);
        for ch in 0..2 {
            assert!((v[ch * 3] - v[ch * 3 + 1]).abs() < 1e-15);
            assert!((v[ch * 3] - v[ch * 3 + 2]).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let mut t = Tape::new();
        let x = t.input(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let s = t.softmax_rows(x);
        for &v in t.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let a = t.input(1, 4, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let sa = t.softmax_rows(a);
        let b = t.input(1, 4, vec![100.3, 98.8, 102.0, 100.7]).unwrap();
        let sb = t.softmax_rows(b);
        for (x, y) in t.value(sa).iter().zip(t.value(sb)) {
            assert!((x - y).abs() < 1e-9);
        }
        let sum: f64 = t.value(sa).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(t.value(sa).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.input(1, 1, vec![0.0]).unwrap();
        let s = t.sigmoid(x);
        assert_eq!(t.value(s), &[0.5]);
    }

    #[test]
    fn dropout_eval_and_p_zero_are_identity() {
        let mut rng = rng_from_seed(1);
        let mut t = Tape::new();
        let x = t.input(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eval = t.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(t.value(eval), t.value(x));
        let p0 = t.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(t.value(p0), t.value(x));
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(t.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = rng_from_seed(9);
        let n = 20_000;
        let mut t = Tape::new();
        let x = t.input(1, n, vec![1.0; n]).unwrap();
        let d = t.dropout(x, 0.1, true, &mut rng).unwrap();
        let v = t.value(d);
        let dropped = v.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        assert!((dropped - 0.1).abs() < 0.02, "dropped={dropped}");
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean={mean}");
    }

    #[test]
    fn max_all_routes_gradient_to_argmax() {
        let mut t = Tape::new();
        let x = t.input(1, 4, vec![0.1, 3.0, -2.0, 1.5]).unwrap();
        let m = t.max_all(x);
        assert_eq!(t.scalar(m).unwrap(), 3.0);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bce_with_logits_values_and_gradient() {
        let mut t = Tape::new();
        // logit 0 -> p = 0.5 -> loss = ln 2 for either target
        let z = t.input(1, 1, vec![0.0]).unwrap();
        for y in [0.0, 1.0] {
            let l = t.bce_with_logits(z, y).unwrap();
            assert!((t.scalar(l).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        }
        // gradient equals p - y on random logits
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let zv: f64 = rng.gen_range(-8.0..8.0);
            let y = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            let mut t = Tape::new();
            let z = t.input(1, 1, vec![zv]).unwrap();
            let l = t.bce_with_logits(z, y).unwrap();
            let g = t.backward(l).unwrap();
            assert!((g.get(z)[0] - (sigmoid(zv) - y)).abs() < 1e-9);
        }
    }

    /// Central finite differences of a scalar-valued graph with respect to a
    /// single input node, compared against reverse-mode gradients.
    fn grad_check<F>(rows: usize, cols: usize, seed: u64, build: F)
    where
        F: Fn(&mut Tape, NodeId) -> NodeId,
    {
        let mut rng = rng_from_seed(seed);
        let x0: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let eval = |data: Vec<f64>| -> f64 {
            let mut t = Tape::new();
            let x = t.input(rows, cols, data).unwrap();
            let root = build(&mut t, x);
            t.scalar(root).unwrap()
        };
        let mut t = Tape::new();
        let x = t.input(rows, cols, x0.clone()).unwrap();
        let root = build(&mut t, x);
        let analytic = t.backward(root).unwrap();
        let step = 1e-3;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus[i] += step;
            let mut minus = x0.clone();
            minus[i] -= step;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * step);
            let a = analytic.get(x)[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            assert!(rel < 1e-4, "seed {seed} element {i}: analytic={a} numeric={numeric}");
        }
    }

    /// Weights the output elementwise with a fixed pattern, then sums, so the
    /// scalar depends on every element distinctly.
    fn weighted_sum(t: &mut Tape, y: NodeId) -> NodeId {
        let (r, c) = t.shape(y);
        let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.07 * i as f64).collect();
        let wn = t.input(r, c, w).unwrap();
        let m = t.mul(y, wn).unwrap();
        t.sum_all(m)
    }

    #[test]
    fn gradient_checks_all_ops() {
        for seed in 0..25u64 {
            let mut shape_rng = rng_from_seed(1000 + seed);
            let r = shape_rng.gen_range(1..5usize);
            let c = shape_rng.gen_range(1..6usize);

            grad_check(r, c, seed, |t, x| {
                // linear through a fixed weight/bias
                let (_, cols) = t.shape(x);
                let w: Vec<f64> = (0..cols * 3).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
                let wn = t.input(cols, 3, w).unwrap();
                let b = t.input(1, 3, vec![0.2, -0.4, 0.6]).unwrap();
                let y = t.linear(x, wn, b).unwrap();
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.relu(x);
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.tanh(x);
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.sigmoid(x);
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.softmax_rows(x);
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.transpose(x);
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.scale(x, -1.7);
                weighted_sum(t, y)
            });
            if c >= 2 {
                grad_check(r, c, seed, |t, x| {
                    let y = t.layer_norm_rows(x);
                    weighted_sum(t, y)
                });
            }
            grad_check(r, c, seed, |t, x| {
                // x^T x exercises both matmul gradient paths on one node
                let xt = t.transpose(x);
                let y = t.matmul(xt, x).unwrap();
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let y = t.concat_rows(&[x, x]).unwrap();
                weighted_sum(t, y)
            });
            grad_check(r, c, seed, |t, x| {
                let (rr, cc) = t.shape(x);
                let y = t.reshape(x, cc, rr).unwrap();
                weighted_sum(t, y)
            });
        }
    }

    #[test]
    fn gradient_check_pointwise_conv() {
        for seed in 0..20u64 {
            grad_check(3, 5, seed, |t, x| {
                let w: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 3.0).collect();
                let wn = t.input(2, 3, w).unwrap();
                let b = t.input(1, 2, vec![0.3, -0.1]).unwrap();
                let y = t.pointwise_conv(x, wn, b).unwrap();
                weighted_sum(t, y)
            });
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = rng_from_seed(11);
            let mut t = Tape::new();
            let x = t.input(4, 6, (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
            let d = t.dropout(x, 0.2, true, &mut rng).unwrap();
            let s = t.softmax_rows(d);
            t.value(s).to_vec()
        };
        assert_eq!(run(), run());
    }
}
