use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Scalar};

use super::{matmul_nt, matmul_raw, matmul_tn, SparseMatrix, Tensor};

/// Denominator guard for [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fused operation with a hand-written backward pass.
pub trait CustomOp<S: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient.
    /// `None` means zero.
    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>>;
}

enum Op<S: Scalar> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Exp(Var),
    Neg(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    LayerNorm { x: Var, inv_std: Vec<S> },
    Dropout { x: Var, mask: Vec<S> },
    Gather { x: Var, idx: Vec<usize> },
    SpMM { m: Arc<SparseMatrix<S>>, x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<S>> },
}

struct Node<S: Scalar> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Append-only record of primitive operations.
///
/// Values are computed eagerly when an operation is recorded; [`Tape::backward`]
/// replays the record in reverse to accumulate gradients. Nodes only ever
/// refer to earlier nodes, so the record is acyclic by construction.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn column_sums<S: Scalar>(t: &Tensor<S>) -> Vec<S> {
    let (m, n) = (t.rows(), t.cols());
    let mut buf = Vec::with_capacity(m);
    (0..n)
        .map(|j| {
            buf.clear();
            buf.extend((0..m).map(|i| t.data()[i * n + j]));
            ordered_sum(&mut buf)
        })
        .collect()
}

fn row_vector_len<S: Scalar>(op: &'static str, v: &Tensor<S>) -> Result<usize> {
    match v.shape() {
        [n] => Ok(*n),
        [1, n] => Ok(*n),
        s => Err(Error::shape(op, format!("expected a row vector, got {s:?}"))),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Like [`Tape::leaf`] and [`Tape::constant`], without copying `value`.
    pub fn shared(&mut self, value: Arc<Tensor<S>>, needs_grad: bool) -> Var {
        let op = if needs_grad { Op::Leaf } else { Op::Constant };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    /// `x + bias` with `bias` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = row_vector_len("add_row", self.value(bias))?;
        let tx = self.value(x);
        if tx.rank() != 2 || tx.cols() != n {
            return Err(Error::shape("add_row", format!("{:?} + row of {n}", tx.shape())));
        }
        let b = self.value(bias).data();
        let data = tx.data().iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let g = self.any_grad(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), g))
    }

    /// `x ⊙ gain` with `gain` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let n = row_vector_len("mul_row", self.value(gain))?;
        let tx = self.value(x);
        if tx.rank() != 2 || tx.cols() != n {
            return Err(Error::shape("mul_row", format!("{:?} ⊙ row of {n}", tx.shape())));
        }
        let w = self.value(gain).data();
        let data = tx.data().iter().enumerate().map(|(i, &v)| v * w[i % n]).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let g = self.any_grad(&[x, gain]);
        Ok(self.push(out, Op::MulRow(x, gain), g))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out = self.value(x).map(|v| v * c);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, c), g)
    }

    /// Concatenation along the last axis of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no operands"));
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::shape("concat", format!("operand {:?} with {rows} rows expected", t.shape())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let g = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    /// Sum of all entries, as a scalar of shape `[]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut vals = self.value(x).data().to_vec();
        let out = Tensor::scalar(ordered_sum(&mut vals));
        let g = self.any_grad(&[x]);
        self.push(out, Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = S::lit(t.len().max(1) as f64);
        let mut vals = t.data().to_vec();
        let out = Tensor::scalar(ordered_sum(&mut vals) / n);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Mean(x), g)
    }

    /// Column sums of an `m×n` matrix, giving `1×n`. Independent of row order.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("sum_rows", format!("{:?}", t.shape())));
        }
        let out = Tensor::matrix(1, t.cols(), column_sums(t))?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::SumRows(x), g))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        let g = self.any_grad(&[x]);
        self.push(out, Op::Exp(x), g)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| -v);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Neg(x), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), g)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Softplus(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(S::zero()));
        let g = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), g)
    }

    /// Row-wise standardization without affine terms:
    /// `(x − mean) / sqrt(var + eps)` with the biased variance.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("layer_norm", format!("{:?}", t.shape())));
        }
        let (m, n) = (t.rows(), t.cols());
        let eps = S::lit(LAYER_NORM_EPS);
        let nn = S::lit(n.max(1) as f64);
        let mut data = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = t.row(i);
            let mean = row.iter().copied().sum::<S>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nn;
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            data.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        let out = Tensor::matrix(m, n, data)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, g))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 − rate)` at train
    /// time, so evaluation mode is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, g))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("gather_rows", format!("{:?}", t.shape())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::IndexOutOfRange { index: bad, len: t.rows() });
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(idx.len(), t.cols(), data)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::Gather { x, idx: idx.to_vec() }, g))
    }

    /// Constant sparse matrix times a dense operand.
    pub fn spmm(&mut self, m: &Arc<SparseMatrix<S>>, x: Var) -> Result<Var> {
        let out = m.matmul(self.value(x))?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::SpMM { m: Arc::clone(m), x }, g))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits`, stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != labels.len() || labels.is_empty() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", t.shape(), labels.len()),
            ));
        }
        let c = t.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidLabel { label: bad, num_classes: c });
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut losses = Vec::with_capacity(labels.len());
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            losses.push(log_z - row[label]);
            probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        }
        let n = S::lit(labels.len() as f64);
        let out = Tensor::scalar(ordered_sum(&mut losses) / n);
        let g = self.any_grad(&[logits]);
        Ok(self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, g))
    }

    /// Records a fused operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<S>, op: Box<dyn CustomOp<S>>) -> Var {
        let g = self.any_grad(inputs);
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, g)
    }

    /// Reverse accumulation from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        let shape = self.value(loss).shape().to_vec();
        if !shape.is_empty() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let y = &node.value;
            let mut acc = |v: Var, g: Tensor<S>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, d) in existing.data_mut().iter_mut().zip(g.data()) {
                            *e += *d;
                        }
                    }
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.nodes[a.0].needs_grad {
                        let ga = matmul_nt(gy.data(), tb.data(), m, n, k);
                        acc(*a, Tensor::matrix(m, k, ga).expect("shape"));
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = matmul_tn(ta.data(), gy.data(), m, k, n);
                        acc(*b, Tensor::matrix(k, n, gb).expect("shape"));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, gy.clone());
                    acc(*b, gy);
                }
                Op::Sub(a, b) => {
                    acc(*b, gy.map(|v| -v));
                    acc(*a, gy);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(*a, zip_map(&gy, tb, |g, v| g * v));
                    acc(*b, zip_map(&gy, ta, |g, v| g * v));
                }
                Op::AddRow(x, bias) => {
                    let gb = column_sums(&gy);
                    let shape = self.value(*bias).shape().to_vec();
                    acc(*bias, Tensor::new(shape, gb).expect("shape"));
                    acc(*x, gy);
                }
                Op::MulRow(x, gain) => {
                    let tx = self.value(*x);
                    let w = self.value(*gain);
                    let n = w.len();
                    let prod = zip_map(&gy, tx, |g, v| g * v);
                    acc(*gain, Tensor::new(w.shape().to_vec(), column_sums(&prod)).expect("shape"));
                    let data = gy.data().iter().enumerate().map(|(k, &g)| g * w.data()[k % n]).collect();
                    acc(*x, Tensor::new(gy.shape().to_vec(), data).expect("shape"));
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    acc(*x, gy.map(|g| g * c));
                }
                Op::Concat(parts) => {
                    let rows = gy.rows();
                    let total = gy.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&gy.data()[r * total + offset..r * total + offset + w]);
                        }
                        acc(*p, Tensor::matrix(rows, w, data).expect("shape"));
                        offset += w;
                    }
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(*x, Tensor::full(&shape, gy.item()));
                }
                Op::Mean(x) => {
                    let t = self.value(*x);
                    let n = S::lit(t.len().max(1) as f64);
                    acc(*x, Tensor::full(t.shape(), gy.item() / n));
                }
                Op::SumRows(x) => {
                    let t = self.value(*x);
                    let n = t.cols();
                    let data = (0..t.len()).map(|k| gy.data()[k % n]).collect();
                    acc(*x, Tensor::new(t.shape().to_vec(), data).expect("shape"));
                }
                Op::Exp(x) => acc(*x, zip_map(&gy, y, |g, v| g * v)),
                Op::Neg(x) => acc(*x, gy.map(|g| -g)),
                Op::Sigmoid(x) => acc(*x, zip_map(&gy, y, |g, s| g * s * (S::one() - s))),
                Op::Softplus(x) => {
                    let tx = self.value(*x);
                    acc(*x, zip_map(&gy, tx, |g, v| g * sigmoid(v)));
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    acc(*x, zip_map(&gy, tx, |g, v| if v > S::zero() { g } else { S::zero() }));
                }
                Op::LayerNorm { x, inv_std } => {
                    let (m, n) = (y.rows(), y.cols());
                    let nn = S::lit(n.max(1) as f64);
                    let mut data = Vec::with_capacity(m * n);
                    for r in 0..m {
                        let gr = gy.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().copied().sum::<S>() / nn;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / nn;
                        data.extend(
                            gr.iter().zip(yr).map(|(&g, &v)| inv_std[r] * (g - mean_g - v * mean_gy)),
                        );
                    }
                    acc(*x, Tensor::matrix(m, n, data).expect("shape"));
                }
                Op::Dropout { x, mask } => {
                    let data = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    acc(*x, Tensor::new(gy.shape().to_vec(), data).expect("shape"));
                }
                Op::Gather { x, idx } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut data = vec![S::zero(); t.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            data[src * c + j] += gy.data()[r * c + j];
                        }
                    }
                    acc(*x, Tensor::new(t.shape().to_vec(), data).expect("shape"));
                }
                Op::SpMM { m, x } => {
                    let gx = m.transpose().matmul(&gy).expect("shape");
                    acc(*x, gx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let c = self.value(*logits).cols();
                    let scale = gy.item() / S::lit(labels.len() as f64);
                    let mut data = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        data[r * c + l] -= S::one();
                    }
                    for v in data.iter_mut() {
                        *v *= scale;
                    }
                    acc(*logits, Tensor::matrix(labels.len(), c, data).expect("shape"));
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Tensor<S>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gs = op.backward(&ins, y, &gy);
                    for (v, g) in inputs.iter().zip(gs) {
                        if let Some(g) = g {
                            acc(*v, g);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Accumulated gradients, indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
