//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every primitive op as it is evaluated. Nodes are
//! appended in evaluation order, so the tape is already topologically
//! sorted and [`Graph::backward`] visits each node exactly once by walking
//! it in reverse.
//!
//! Reductions that collapse rows ([`Graph::segment_sum`], [`Graph::mean_rows`])
//! add each column's contributions in ascending value order. The result is
//! then independent of how the rows were permuted, bit for bit.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    SegmentSum(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(NodeId, Vec<f64>),
    MeanRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<f64>,
        target: Vec<f64>,
    },
    BceWithLogits {
        logits: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Elementwise binary op kinds accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementwise unary op kinds accepted by [`Graph::unary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Exp,
    Log,
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, NodeId>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, NodeId)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// `(parameter index, gradient)` for every parameter bound on the tape,
    /// ordered by parameter index.
    pub fn params(&self) -> impl Iterator<Item = (usize, Option<&Tensor>)> + '_ {
        self.params.iter().map(|&(p, id)| (p, self.get(id)))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, true, "variable")
    }

    /// Binds parameter `index` to a leaf, reusing the node if it is
    /// already on the tape.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Result<NodeId> {
        if let Some(&id) = self.params.get(&index) {
            return Ok(id);
        }
        let id = self.push(value.clone(), Op::Leaf, true, "param")?;
        self.params.insert(index, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.value(a).require_2d("matmul")?;
        let (k2, m) = self.value(b).require_2d("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{n},{k}] x [{k2},{m}]: inner dimensions differ"),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// Elementwise binary op with exact-shape or scalar broadcasting.
    pub fn elementwise(&mut self, op: Binary, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let shape = if va.shape() == vb.shape() {
            va.shape().to_vec()
        } else if vb.is_scalar() {
            va.shape().to_vec()
        } else if va.is_scalar() {
            vb.shape().to_vec()
        } else {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?} (only exact or scalar broadcast)", va.shape(), vb.shape()),
            ));
        };
        let n: usize = shape.iter().product();
        let at = |i: usize| if va.is_scalar() { va.data()[0] } else { va.data()[i] };
        let bt = |i: usize| if vb.is_scalar() { vb.data()[0] } else { vb.data()[i] };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (at(i), bt(i));
            out.push(match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => {
                    if y == 0.0 {
                        return Err(Error::domain("div", "division by zero"));
                    }
                    x / y
                }
            });
        }
        let rg = self.rg(a) || self.rg(b);
        let node = match op {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
            Binary::Div => Op::Div(a, b),
        };
        self.push(Tensor::new(shape, out)?, node, rg, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Binary::Div, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (data, node, name) = match op {
            Unary::Relu => (v.data().iter().map(|&t| t.max(0.0)).collect(), Op::Relu(x), "relu"),
            Unary::Exp => (v.data().iter().map(|t| t.exp()).collect(), Op::Exp(x), "exp"),
            Unary::Log => {
                if let Some(bad) = v.data().iter().find(|&&t| t <= 0.0) {
                    return Err(Error::domain("log", format!("non-positive input {bad}")));
                }
                (v.data().iter().map(|t| t.ln()).collect(), Op::Log(x), "log")
            }
        };
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, node, rg, name)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Unary::Log, x)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|t| t * c).collect())?;
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg, "scale")
    }

    /// `x[n,d] + b[d]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(x).require_2d("add_bias")?;
        let bv = self.value(b);
        if bv.numel() != d {
            return Err(Error::shape("add_bias", format!("bias of {} for width {d}", bv.numel())));
        }
        let mut out = self.value(x).data().to_vec();
        for r in 0..n {
            for (o, bb) in out[r * d..(r + 1) * d].iter_mut().zip(self.value(b).data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(Tensor::matrix(n, d, out)?, Op::AddBias(x, b), rg, "add_bias")
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let (n, d) = self.value(x).require_2d("gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            out.extend_from_slice(self.value(x).row(i));
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(index.len(), d, out)?,
            Op::GatherRows(x, index.to_vec()),
            rg,
            "gather_rows",
        )
    }

    /// Row `s` of the output is the sum of the rows of `x` whose segment id
    /// is `s`; empty segments give zero rows.
    pub fn segment_sum(&mut self, x: NodeId, segment_ids: &[usize], num_segments: usize) -> Result<NodeId> {
        let (n, d) = self.value(x).require_2d("segment_sum")?;
        if segment_ids.len() != n {
            return Err(Error::shape(
                "segment_sum",
                format!("{} segment ids for {n} rows", segment_ids.len()),
            ));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_segments];
        for (row, &s) in segment_ids.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    bound: num_segments,
                });
            }
            members[s].push(row);
        }
        let xv = self.value(x);
        let mut out = vec![0.0; num_segments * d];
        let mut buf = Vec::new();
        for (s, rows) in members.iter().enumerate() {
            for c in 0..d {
                buf.clear();
                buf.extend(rows.iter().map(|&r| xv.data()[r * d + c]));
                out[s * d + c] = sorted_sum(&mut buf);
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(num_segments, d, out)?,
            Op::SegmentSum(x, segment_ids.to_vec()),
            rg,
            "segment_sum",
        )
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "nothing to concatenate"));
        }
        let n = self.value(parts[0]).require_2d("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).require_2d("concat_cols")?;
            if r != n {
                return Err(Error::shape("concat_cols", format!("row counts {n} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(n, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(x).require_2d("layer_norm")?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::shape("layer_norm", format!("scale/shift must have width {d}")));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::matrix(n, d, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    /// Inverted dropout. In eval mode (`train == false`) or with `rate == 0`
    /// this is the identity and records nothing.
    pub fn dropout(&mut self, x: NodeId, rate: f64, train: bool, rng: &mut SplitMix64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Dropout(x, mask), rg, "dropout")
    }

    /// Mean over rows: `[n,d] -> [1,d]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(x).require_2d("mean_rows")?;
        if n == 0 {
            return Err(Error::shape("mean_rows", "no rows to average"));
        }
        let xv = self.value(x).data();
        let mut buf = Vec::with_capacity(n);
        let out = (0..d)
            .map(|c| {
                buf.clear();
                buf.extend((0..n).map(|r| xv[r * d + c]));
                sorted_sum(&mut buf) / n as f64
            })
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(1, d, out)?, Op::MeanRows(x), rg, "mean_rows")
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// Mean of all elements; zero for an empty tensor.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let m = if v.numel() == 0 {
            0.0
        } else {
            v.data().iter().sum::<f64>() / v.numel() as f64
        };
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg, "mean")
    }

    /// Mean over rows of `-sum_c target[r,c] * log_softmax(logits)[r,c]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        let lv = self.value(logits);
        let (n, c) = lv.require_2d("softmax_cross_entropy")?;
        if target.shape() != lv.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?} vs target {:?}", lv.shape(), target.shape()),
            ));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for r in 0..n {
            let z = lv.row(r);
            let t = target.row(r);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut row_loss = 0.0;
            for k in 0..c {
                probs[r * c + k] = (z[k] - lse).exp();
                row_loss -= t[k] * (z[k] - lse);
            }
            total += row_loss;
        }
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                target: target.data().to_vec(),
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Binary cross-entropy with logits, averaged over entries whose weight
    /// is nonzero. Entries with weight 0 (missing labels) contribute
    /// nothing; an all-masked input gives loss 0.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64], weights: &[f64]) -> Result<NodeId> {
        let lv = self.value(logits);
        if targets.len() != lv.numel() || weights.len() != lv.numel() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits, {} targets, {} weights", lv.numel(), targets.len(), weights.len()),
            ));
        }
        let denom: f64 = weights.iter().sum();
        let mut total = 0.0;
        for ((&z, &y), &w) in lv.data().iter().zip(targets).zip(weights) {
            if w != 0.0 {
                total += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        let loss = if denom > 0.0 { total / denom } else { 0.0 };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            rg,
            "bce_with_logits",
        )
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }

        let mut params: Vec<(usize, NodeId)> = self.params.iter().map(|(&p, &id)| (p, id)).collect();
        params.sort_unstable();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[1];
                if self.rg(*a) {
                    let ga = matmul_nt(gd, bv.data(), n, k, m);
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.rg(*b) {
                    let gb = matmul_tn(av.data(), gd, n, k, m);
                    accumulate(grads, *b, bv.shape(), gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let at = |i: usize| if av.is_scalar() { av.data()[0] } else { av.data()[i] };
                let bt = |i: usize| if bv.is_scalar() { bv.data()[0] } else { bv.data()[i] };
                let n = gd.len();
                let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let (x, y) = (at(i), bt(i));
                    let (da, db) = match node.op {
                        Op::Add(..) => (1.0, 1.0),
                        Op::Sub(..) => (1.0, -1.0),
                        Op::Mul(..) => (y, x),
                        _ => (1.0 / y, -x / (y * y)),
                    };
                    ga[i] = gd[i] * da;
                    gb[i] = gd[i] * db;
                }
                if self.rg(*a) {
                    accumulate(grads, *a, av.shape(), reduce_broadcast(ga, av));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, bv.shape(), reduce_broadcast(gb, bv));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = xv.data().iter().zip(gd).map(|(&v, &gg)| if v > 0.0 { gg } else { 0.0 }).collect();
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Exp(x) => {
                let gx = node.value.data().iter().zip(gd).map(|(y, gg)| y * gg).collect();
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let gx = xv.data().iter().zip(gd).map(|(v, gg)| gg / v).collect();
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Scale(x, c) => {
                let gx = gd.iter().map(|gg| gg * c).collect();
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x).shape(), gd.to_vec());
                }
                if self.rg(*b) {
                    let d = self.value(*b).numel();
                    let mut gb = vec![0.0; d];
                    for row in gd.chunks(d.max(1)) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *b, self.value(*b).shape(), gb);
                }
            }
            Op::GatherRows(x, index) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut gx = vec![0.0; xv.numel()];
                for (r, &src) in index.iter().enumerate() {
                    for c in 0..d {
                        gx[src * d + c] += gd[r * d + c];
                    }
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::SegmentSum(x, ids) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut gx = Vec::with_capacity(xv.numel());
                for &s in ids {
                    gx.extend_from_slice(&gd[s * d..(s + 1) * d]);
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(n * w);
                        for r in 0..n {
                            gp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, pv.shape(), gp);
                    }
                    offset += w;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = self.value(*x);
                let (n, d) = (xv.rows(), xv.cols());
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let mut gg = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += gd[r * d + c] * xhat[r * d + c];
                        }
                    }
                    accumulate(grads, *gamma, self.value(*gamma).shape(), gg);
                }
                if self.rg(*beta) {
                    let mut gb = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            gb[c] += gd[r * d + c];
                        }
                    }
                    accumulate(grads, *beta, self.value(*beta).shape(), gb);
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; n * d];
                    for r in 0..n {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..d {
                            let dh = gd[r * d + c] * gam[c];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * d + c];
                        }
                        let scale = inv_std[r] / d as f64;
                        for c in 0..d {
                            let dh = gd[r * d + c] * gam[c];
                            gx[r * d + c] = scale * (d as f64 * dh - sum_dh - xhat[r * d + c] * sum_dh_h);
                        }
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::Dropout(x, mask) => {
                let gx = gd.iter().zip(mask).map(|(gg, m)| gg * m).collect();
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = xv.rows();
                let inv = 1.0 / n as f64;
                let mut gx = Vec::with_capacity(xv.numel());
                for _ in 0..n {
                    gx.extend(gd.iter().map(|gg| gg * inv));
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, xv.shape(), vec![gd[0]; xv.numel()]);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = xv.numel().max(1) as f64;
                accumulate(grads, *x, xv.shape(), vec![gd[0] / n; xv.numel()]);
            }
            Op::SoftmaxCrossEntropy { logits, probs, target } => {
                let lv = self.value(*logits);
                let (n, c) = (lv.rows(), lv.cols());
                let scale = gd[0] / n.max(1) as f64;
                let mut gl = vec![0.0; n * c];
                for r in 0..n {
                    let tsum: f64 = target[r * c..(r + 1) * c].iter().sum();
                    for k in 0..c {
                        gl[r * c + k] = scale * (probs[r * c + k] * tsum - target[r * c + k]);
                    }
                }
                accumulate(grads, *logits, lv.shape(), gl);
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
                denom,
            } => {
                let lv = self.value(*logits);
                let gl = if *denom > 0.0 {
                    lv.data()
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&z, &y), &w)| gd[0] * w * (sigmoid(z) - y) / denom)
                        .collect()
                } else {
                    vec![0.0; lv.numel()]
                };
                accumulate(grads, *logits, lv.shape(), gl);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sums in ascending value order so the result does not depend on the
/// order in which the values were produced.
fn sorted_sum(buf: &mut [f64]) -> f64 {
    buf.sort_unstable_by(f64::total_cmp);
    buf.iter().sum()
}

fn reduce_broadcast(g: Vec<f64>, target: &Tensor) -> Vec<f64> {
    if target.numel() == g.len() {
        g
    } else {
        vec![g.iter().sum()]
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                *e += v;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape matches its node"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let i = g.constant(Tensor::eye(2)).unwrap();
        let p = g.matmul(a, i).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.constant(t(&[1, 2], &[1.0, 0.0])).unwrap();
        let c = g.constant(t(&[2, 1], &[2.0, 3.0])).unwrap();
        let s = g.matmul(r, c).unwrap();
        assert_eq!(g.value(s).data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3])).unwrap();
        let b = g.constant(Tensor::zeros([2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn unary_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::vector(vec![0.0])).unwrap();
        let e = g.exp(z).unwrap();
        assert_eq!(g.value(e).data(), &[1.0]);
    }

    #[test]
    fn log_and_div_domain_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(matches!(g.log(x), Err(Error::Domain { .. })));
        let one = g.constant(Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert!(matches!(g.div(one, x), Err(Error::Domain { .. })));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0])).unwrap();
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn broadcast_rules() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 2])).unwrap();
        let s = g.constant(Tensor::scalar(3.0)).unwrap();
        let b = g.constant(Tensor::zeros([2, 3])).unwrap();
        let r = g.add(a, s).unwrap();
        assert_eq!(g.value(r).data(), &[3.0; 4]);
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn segment_sum_examples() {
        let mut g = Graph::new();
        let v = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0])).unwrap();
        let s = g.segment_sum(v, &[0, 0, 1], 2).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 3.0]);

        let w = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let full = g.segment_sum(w, &[0, 0], 1).unwrap();
        assert_eq!(g.value(full).data(), &[4.0, 6.0]);

        let e = g.segment_sum(w, &[0, 1], 3).unwrap();
        assert_eq!(g.value(e).row(2), &[0.0, 0.0]);

        assert!(matches!(
            g.segment_sum(w, &[0, 3], 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros([1, 30])).unwrap();
        let mut tgt = Tensor::zeros([1, 30]);
        tgt.data_mut()[4] = 1.0;
        let l = g.softmax_cross_entropy(z, &tgt).unwrap();
        assert!((g.value(l).item() - 30f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let mut g = Graph::new();
            let mut z = Tensor::zeros([1, 5]);
            z.data_mut()[2] = margin;
            let z = g.constant(z).unwrap();
            let mut tgt = Tensor::zeros([1, 5]);
            tgt.data_mut()[2] = 1.0;
            let l = g.softmax_cross_entropy(z, &tgt).unwrap();
            let l = g.value(l).item();
            assert!(l < prev);
            assert!(l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_seeded() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::full([4, 8], 1.0)).unwrap();
        let mut rng = SplitMix64::new(1);
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let a = g.dropout(x, 0.5, true, &mut SplitMix64::new(9)).unwrap();
        let b = g.dropout(x, 0.5, true, &mut SplitMix64::new(9)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0])).unwrap();
        let gm = g.constant(Tensor::full([4], 1.0)).unwrap();
        let bt = g.constant(Tensor::zeros([4])).unwrap();
        let y = g.layer_norm(x, gm, bt).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn bce_zero_logits_is_ln2_and_masking() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros([1, 4])).unwrap();
        let l = g.bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0], &[1.0; 4]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let m = g.bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0], &[0.0; 4]).unwrap();
        assert_eq!(g.value(m).item(), 0.0);
    }

    #[test]
    fn param_binding_is_cached() {
        let mut g = Graph::new();
        let w = Tensor::full([2, 2], 0.5);
        let a = g.param(3, &w).unwrap();
        let b = g.param(3, &w).unwrap();
        assert_eq!(a, b);
        let s = g.sum(a).unwrap();
        let gr = g.backward(s).unwrap();
        let ps: Vec<_> = gr.params().collect();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].0, 3);
    }
}
