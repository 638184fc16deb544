//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass together with the
//! values it needs for its backward rule. [`Tape::backward`] consumes the tape
//! and returns the gradient of a scalar loss with respect to every leaf that was
//! created with [`Tape::leaf`]. Graph message passing is expressed through
//! segment operations over a [`SegmentIndex`] that maps each edge to its target
//! node.
//!
//! Every op checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of letting bad values propagate.

mod gradcheck;
mod matrix;
mod segment;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use matrix::{gemm, Matrix};
pub use segment::SegmentIndex;

use crate::math;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dropout / normalization behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    BiasAdd(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    HeadDot {
        q: Var,
        k: Var,
        heads: usize,
        scale: f64,
    },
    HeadWeight {
        values: Var,
        weights: Var,
        heads: usize,
    },
    SegmentSoftmax {
        seg: Vec<usize>,
    },
    SegmentSum {
        values: Var,
        seg: Vec<usize>,
    },
    SegmentMean {
        values: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    /// Gradient flows into this node (it is a trainable leaf or depends on one).
    tracked: bool,
    /// Input of a `SegmentSoftmax` node, which keeps its output instead.
    aux: Option<Var>,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Trainable input: its gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input (features, fixed buffers).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            tracked: false,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            tracked,
            aux: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let out = av.matmul(bv);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "bias_add",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push("bias_add", out, Op::BiasAdd(x, bias), &[x, bias])
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.bias_add(xw, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Matrix::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(shape_err("mean", "empty input".into()));
        }
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push("mean", Matrix::scalar(m), Op::Mean(x), &[x])
    }

    /// Per-row, per-head scaled dot product: `out[e, h] = scale * <q[e, head h], k[e, head h]>`.
    /// Head `h` spans columns `h*d/H .. (h+1)*d/H`.
    pub fn head_dot(&mut self, q: Var, k: Var, heads: usize, scale: f64) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.shape() != kv.shape() || heads == 0 || qv.cols() % heads != 0 {
            return Err(shape_err(
                "head_dot",
                format!("q {:?}, k {:?}, heads {heads}", qv.shape(), kv.shape()),
            ));
        }
        let dh = qv.cols() / heads;
        let mut out = Matrix::zeros(qv.rows(), heads);
        for e in 0..qv.rows() {
            let (qr, kr) = (qv.row(e), kv.row(e));
            for h in 0..heads {
                let s: f64 = qr[h * dh..(h + 1) * dh]
                    .iter()
                    .zip(&kr[h * dh..(h + 1) * dh])
                    .map(|(a, b)| a * b)
                    .sum();
                out.set(e, h, s * scale);
            }
        }
        self.push("head_dot", out, Op::HeadDot { q, k, heads, scale }, &[q, k])
    }

    /// Multiplies each head block of `values` (`E x d`) by the matching column of `weights` (`E x H`).
    pub fn head_weight(&mut self, values: Var, weights: Var) -> Result<Var> {
        let (vv, wv) = (self.value(values), self.value(weights));
        let heads = wv.cols();
        if vv.rows() != wv.rows() || heads == 0 || vv.cols() % heads != 0 {
            return Err(shape_err(
                "head_weight",
                format!("values {:?}, weights {:?}", vv.shape(), wv.shape()),
            ));
        }
        let dh = vv.cols() / heads;
        let mut out = vv.clone();
        for e in 0..out.rows() {
            let w = wv.row(e).to_vec();
            for (j, o) in out.row_mut(e).iter_mut().enumerate() {
                *o *= w[j / dh];
            }
        }
        self.push(
            "head_weight",
            out,
            Op::HeadWeight {
                values,
                weights,
                heads,
            },
            &[values, weights],
        )
    }

    /// Column-wise softmax within each segment. Max-subtracted for stability.
    pub fn segment_softmax(&mut self, logits: Var, seg: &SegmentIndex) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != seg.len() {
            return Err(shape_err(
                "segment_softmax",
                format!("{} rows vs {} segment ids", lv.rows(), seg.len()),
            ));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                op: "segment_softmax",
            });
        }
        let (n, c, s) = (lv.rows(), lv.cols(), seg.num_segments());
        let ids = seg.ids();
        let mut max = vec![f64::NEG_INFINITY; s * c];
        for e in 0..n {
            for j in 0..c {
                let m = &mut max[ids[e] * c + j];
                *m = m.max(lv.get(e, j));
            }
        }
        let mut out = Matrix::zeros(n, c);
        let mut denom = vec![0.0; s * c];
        for e in 0..n {
            for j in 0..c {
                let w = math::exp(lv.get(e, j) - max[ids[e] * c + j]);
                out.set(e, j, w);
                denom[ids[e] * c + j] += w;
            }
        }
        for e in 0..n {
            for j in 0..c {
                let v = out.get(e, j) / denom[ids[e] * c + j];
                out.set(e, j, v);
            }
        }
        let v = self.push(
            "segment_softmax",
            out,
            Op::SegmentSoftmax {
                seg: ids.to_vec(),
            },
            &[logits],
        )?;
        self.nodes[v.0].aux = Some(logits);
        Ok(v)
    }

    /// `out[s] = sum of rows e with seg[e] == s`. Empty segments give zero rows.
    pub fn segment_sum(&mut self, values: Var, seg: &SegmentIndex) -> Result<Var> {
        let vv = self.value(values);
        if vv.rows() != seg.len() {
            return Err(shape_err(
                "segment_sum",
                format!("{} rows vs {} segment ids", vv.rows(), seg.len()),
            ));
        }
        let mut out = Matrix::zeros(seg.num_segments(), vv.cols());
        for (e, &s) in seg.ids().iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(vv.row(e)) {
                *o += v;
            }
        }
        self.push(
            "segment_sum",
            out,
            Op::SegmentSum {
                values,
                seg: seg.ids().to_vec(),
            },
            &[values],
        )
    }

    /// Segment average; empty segments give zero rows.
    pub fn segment_mean(&mut self, values: Var, seg: &SegmentIndex) -> Result<Var> {
        let vv = self.value(values);
        if vv.rows() != seg.len() {
            return Err(shape_err(
                "segment_mean",
                format!("{} rows vs {} segment ids", vv.rows(), seg.len()),
            ));
        }
        let mut out = Matrix::zeros(seg.num_segments(), vv.cols());
        for (e, &s) in seg.ids().iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(vv.row(e)) {
                *o += v;
            }
        }
        for (s, &n) in seg.counts().iter().enumerate() {
            if n > 1 {
                let inv = 1.0 / n as f64;
                for o in out.row_mut(s) {
                    *o *= inv;
                }
            }
        }
        self.push(
            "segment_mean",
            out,
            Op::SegmentMean {
                values,
                seg: seg.ids().to_vec(),
                counts: seg.counts().to_vec(),
            },
            &[values],
        )
    }

    /// Row-wise layer normalization (biased variance) followed by `gain`/`bias` (`1 x c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gain).shape() != (1, c) || self.value(bias).shape() != (1, c) || c == 0 {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "x {:?}, gain {:?}, bias {:?}",
                    xv.shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let mut normed = Matrix::zeros(xv.rows(), c);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            for (o, v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = affine_rows(&normed, self.value(gain), self.value(bias));
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Column-wise batch normalization. With `running = None` the batch
    /// statistics (biased variance) are used; otherwise the given fixed mean and
    /// variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if self.value(gain).shape() != (1, c) || self.value(bias).shape() != (1, c) {
            return Err(shape_err("batch_norm", format!("x {:?}", xv.shape())));
        }
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(shape_err("batch_norm", "running stats width".into()));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                if n < 2 {
                    return Err(Error::DegenerateBatchNorm);
                }
                column_stats(xv)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
        let mut normed = Matrix::zeros(n, c);
        for r in 0..n {
            for (j, (o, v)) in normed.row_mut(r).iter_mut().zip(xv.row(r)).enumerate() {
                *o = (v - mean[j]) * inv_std[j];
            }
        }
        let out = affine_rows(&normed, self.value(gain), self.value(bias));
        self.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
                batch_stats: running.is_none(),
            },
            &[x, gain, bias],
        )
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`. The mask is a pure function of
    /// `seed`. Eval mode (or `p == 0`) returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let mut rng = crate::rng::stream(seed, 0xD0D0);
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Matrix::from_vec(
            xv.rows(),
            xv.cols(),
            xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err(
                "concat_cols",
                format!("{:?} | {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Matrix::from_vec(av.rows(), av.cols() + bv.cols(), data);
        self.push("concat_cols", out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err(
                "concat_rows",
                format!("{:?} / {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Matrix::from_vec(av.rows() + bv.rows(), av.cols(), data);
        self.push("concat_rows", out, Op::ConcatRows(a, b), &[a, b])
    }

    /// `out[i] = x[index[i]]`; repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for {} rows", xv.rows()),
            ));
        }
        let mut data = Vec::with_capacity(index.len() * xv.cols());
        for &i in index {
            data.extend_from_slice(xv.row(i));
        }
        let out = Matrix::from_vec(index.len(), xv.cols(), data);
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        )
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} rows vs {} labels", lv.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {} classes", lv.cols()),
            ));
        }
        let probs = row_softmax(lv);
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>());
            total += lse - row[l];
        }
        let loss = total / labels.len() as f64;
        self.push(
            "softmax_cross_entropy",
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Runs the backward pass from a `1 x 1` loss, consuming the tape.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].tracked {
            grads[loss.0] = Some(Matrix::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Constant) || !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, m: Matrix| {
                if nodes[v.0].tracked {
                    match &mut grads[v.0] {
                        Some(existing) => existing.add_assign(&m),
                        slot @ None => *slot = Some(m),
                    }
                }
            };
            let tracked = |v: Var| nodes[v.0].tracked;
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::MatMul(a, b) => {
                    if tracked(*a) {
                        acc(*a, gemm(&g, false, &nodes[b.0].value, true));
                    }
                    if tracked(*b) {
                        acc(*b, gemm(&nodes[a.0].value, true, &g, false));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::BiasAdd(x, b) => {
                    if tracked(*b) {
                        acc(*b, g.column_sums());
                    }
                    acc(*x, g);
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    let d = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(xv.data())
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                    acc(*x, d);
                }
                Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
                Op::Sum(x) => {
                    let (r, c) = nodes[x.0].value.shape();
                    acc(*x, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(x) => {
                    let (r, c) = nodes[x.0].value.shape();
                    acc(*x, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64));
                }
                Op::HeadDot { q, k, heads, scale } => {
                    let (qv, kv) = (&nodes[q.0].value, &nodes[k.0].value);
                    let dh = qv.cols() / heads;
                    let mut dq = Matrix::zeros(qv.rows(), qv.cols());
                    let mut dk = Matrix::zeros(kv.rows(), kv.cols());
                    for e in 0..qv.rows() {
                        for j in 0..qv.cols() {
                            let ge = g.get(e, j / dh) * scale;
                            dq.set(e, j, ge * kv.get(e, j));
                            dk.set(e, j, ge * qv.get(e, j));
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                }
                Op::HeadWeight {
                    values,
                    weights,
                    heads,
                } => {
                    let (vv, wv) = (&nodes[values.0].value, &nodes[weights.0].value);
                    let dh = vv.cols() / heads;
                    if tracked(*values) {
                        let mut dv = g.clone();
                        for e in 0..dv.rows() {
                            let w = wv.row(e);
                            for (j, o) in dv.row_mut(e).iter_mut().enumerate() {
                                *o *= w[j / dh];
                            }
                        }
                        acc(*values, dv);
                    }
                    if tracked(*weights) {
                        let mut dw = Matrix::zeros(wv.rows(), *heads);
                        for e in 0..vv.rows() {
                            for (j, (gj, vj)) in g.row(e).iter().zip(vv.row(e)).enumerate() {
                                let cur = dw.get(e, j / dh);
                                dw.set(e, j / dh, cur + gj * vj);
                            }
                        }
                        acc(*weights, dw);
                    }
                }
                Op::SegmentSoftmax { seg } => {
                    let logits = node.aux.expect("segment softmax input");
                    let y = &node.value;
                    let c = y.cols();
                    let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; segments * c];
                    for (e, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            dot[s * c + j] += y.get(e, j) * g.get(e, j);
                        }
                    }
                    let mut dx = Matrix::zeros(y.rows(), c);
                    for (e, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            dx.set(e, j, y.get(e, j) * (g.get(e, j) - dot[s * c + j]));
                        }
                    }
                    acc(logits, dx);
                }
                Op::SegmentSum { values, seg } => {
                    let mut dv = Matrix::zeros(seg.len(), g.cols());
                    for (e, &s) in seg.iter().enumerate() {
                        dv.row_mut(e).copy_from_slice(g.row(s));
                    }
                    acc(*values, dv);
                }
                Op::SegmentMean {
                    values,
                    seg,
                    counts,
                } => {
                    let mut dv = Matrix::zeros(seg.len(), g.cols());
                    for (e, &s) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for (o, gv) in dv.row_mut(e).iter_mut().zip(g.row(s)) {
                            *o = gv * inv;
                        }
                    }
                    acc(*values, dv);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = &nodes[gain.0].value;
                    let c = normed.cols();
                    if tracked(*gain) || tracked(*bias) {
                        let mut dg = Matrix::zeros(1, c);
                        let mut db = Matrix::zeros(1, c);
                        for r in 0..g.rows() {
                            for j in 0..c {
                                dg.data_mut()[j] += g.get(r, j) * normed.get(r, j);
                                db.data_mut()[j] += g.get(r, j);
                            }
                        }
                        acc(*gain, dg);
                        acc(*bias, db);
                    }
                    if tracked(*x) {
                        let mut dx = Matrix::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            let dxhat: Vec<f64> =
                                (0..c).map(|j| g.get(r, j) * gv.data()[j]).collect();
                            let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                            let mean_dx = dxhat
                                .iter()
                                .zip(normed.row(r))
                                .map(|(d, h)| d * h)
                                .sum::<f64>()
                                / c as f64;
                            for j in 0..c {
                                dx.set(
                                    r,
                                    j,
                                    inv_std[r] * (dxhat[j] - mean_d - normed.get(r, j) * mean_dx),
                                );
                            }
                        }
                        acc(*x, dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                    batch_stats,
                } => {
                    let gv = &nodes[gain.0].value;
                    let (n, c) = normed.shape();
                    if tracked(*gain) || tracked(*bias) {
                        let mut dg = Matrix::zeros(1, c);
                        let mut db = Matrix::zeros(1, c);
                        for r in 0..n {
                            for j in 0..c {
                                dg.data_mut()[j] += g.get(r, j) * normed.get(r, j);
                                db.data_mut()[j] += g.get(r, j);
                            }
                        }
                        acc(*gain, dg);
                        acc(*bias, db);
                    }
                    if tracked(*x) {
                        let mut dx = Matrix::zeros(n, c);
                        for j in 0..c {
                            let gj = gv.data()[j];
                            if *batch_stats {
                                let mut mean_d = 0.0;
                                let mut mean_dx = 0.0;
                                for r in 0..n {
                                    let d = g.get(r, j) * gj;
                                    mean_d += d;
                                    mean_dx += d * normed.get(r, j);
                                }
                                mean_d /= n as f64;
                                mean_dx /= n as f64;
                                for r in 0..n {
                                    let d = g.get(r, j) * gj;
                                    dx.set(
                                        r,
                                        j,
                                        inv_std[j] * (d - mean_d - normed.get(r, j) * mean_dx),
                                    );
                                }
                            } else {
                                for r in 0..n {
                                    dx.set(r, j, g.get(r, j) * gj * inv_std[j]);
                                }
                            }
                        }
                        acc(*x, dx);
                    }
                }
                Op::Dropout { x, mask } => {
                    let d = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    );
                    acc(*x, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a.0].value.cols();
                    let cb = nodes[b.0].value.cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::ConcatRows(a, b) => {
                    let (ra, c) = nodes[a.0].value.shape();
                    let rb = nodes[b.0].value.rows();
                    let split = ra * c;
                    acc(*a, Matrix::from_vec(ra, c, g.data()[..split].to_vec()));
                    acc(*b, Matrix::from_vec(rb, c, g.data()[split..].to_vec()));
                }
                Op::GatherRows { x, index } => {
                    let (r, c) = nodes[x.0].value.shape();
                    let mut dx = Matrix::zeros(r, c);
                    for (i, &src) in index.iter().enumerate() {
                        for (o, gv) in dx.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    acc(*x, dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut d = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        let cur = d.get(r, l);
                        d.set(r, l, cur - 1.0);
                    }
                    d.scale_in_place(scale);
                    acc(*logits, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a loss with respect to the leaves of a consumed tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn affine_rows(normed: &Matrix, gain: &Matrix, bias: &Matrix) -> Matrix {
    let mut out = normed.clone();
    for r in 0..out.rows() {
        for ((o, g), b) in out.row_mut(r).iter_mut().zip(gain.data()).zip(bias.data()) {
            *o = *o * g + b;
        }
    }
    out
}

/// Per-column mean and biased variance.
pub fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = x.shape();
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    let mut var = vec![0.0; c];
    for r in 0..n {
        for (j, v) in x.row(r).iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    for v in &mut var {
        *v /= n.max(1) as f64;
    }
    (mean, var)
}

/// Row-wise softmax (plain values, no tape).
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, v) in out.row_mut(r).iter_mut().zip(row) {
            *o = math::exp(v - max);
            total += *o;
        }
        for o in out.row_mut(r) {
            *o /= total;
        }
    }
    out
}
