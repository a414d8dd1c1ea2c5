//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so a tape lives no
//! longer than the store it reads from. Calling [`Tape::backward`] on a 1×1
//! node returns gradients for every parameter that influenced it.
//!
//! Everything is a 2-D matrix; vectors are 1×n rows and scalars are 1×1.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    RowNormalize(Var),
    /// Zero-mean unit-variance rows; keeps the per-row inverse std.
    Standardize(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Array2<usize>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SumAll(Var),
    /// Mean negative log-likelihood; keeps the row softmax.
    CrossEntropy(Var, Vec<usize>, Array2<f64>),
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<Var>>,
    relu_margin: f64,
}

const LAYER_NORM_EPS: f64 = 1e-7;

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            relu_margin: f64::INFINITY,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |input| seen by any relu on this tape. Finite-difference
    /// checks are only meaningful when this stays clear of the kink.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.value(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let margin = x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let value = x.mapv(|v| v.max(0.0));
        self.relu_margin = self.relu_margin.min(margin);
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > 30.0 { x } else { x.exp().ln_1p() });
        self.push(value, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a).view());
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Divides each row by its sum. Rows must have non-zero sums.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(value, Op::RowNormalize(a))
    }

    /// Layer normalization: standardize each row, then apply gain and bias rows.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let standardized = self.push(value, Op::Standardize(a, inv_std));
        let scaled = self.mul_row(standardized, gain);
        self.add_row(scaled, bias)
    }

    /// `out[r] = a[indices[r]]`.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut value = Array2::zeros((indices.len(), x.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&x.row(i));
        }
        self.push(value, Op::GatherRows(a, indices))
    }

    /// `out[i, j] = a[i, indices[i, j]]`.
    pub fn gather_cols(&mut self, a: Var, indices: Array2<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), indices.nrows(), "gather_cols row mismatch");
        let value = Array2::from_shape_fn(indices.dim(), |(i, j)| x[[i, indices[[i, j]]]]);
        self.push(value, Op::GatherCols(a, indices))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start, end))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let sum = self.sum_all(a);
        self.scale(sum, 1.0 / n)
    }

    /// Mean cross-entropy of row-wise logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "cross_entropy target count");
        let probs = softmax_rows(x.view());
        let n = targets.len().max(1) as f64;
        let loss: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let row = x.row(r);
                log_sum_exp(row.iter().copied()) - row[t]
            })
            .sum::<f64>()
            / n;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy(logits, targets, probs),
        )
    }

    /// Elementwise product with a fixed mask (dropout masks, attention masks).
    pub fn mul_const(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    pub fn add_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let m = self.constant(c);
        self.add(a, m)
    }

    /// Back-propagates from a 1×1 node, returning gradients for every
    /// parameter reached.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut param_grads: Vec<Option<Array2<f64>>> = vec![None; self.store.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &*node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut param_grads[id.index()], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], grow);
                    accumulate(&mut grads[a.0], g);
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    accumulate(&mut grads[row.0], grow);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Scale(a, f) => accumulate(&mut grads[a.0], g * *f),
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.t().to_owned()),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|d, &out| {
                        if out <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|d, &s| *d *= s * (1.0 - s));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|d, &t| *d *= 1.0 - t * t);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|d, &p| *d = p * (*d - dot));
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total: f64 = grow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|d, &lp| *d -= lp.exp() * total);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for ((mut grow, yrow), xrow) in ga.rows_mut().into_iter().zip(y.rows()).zip(x.rows()) {
                        let sum: f64 = xrow.sum();
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        grow.mapv_inplace(|d| (d - dot) / sum);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Standardize(a, inv_std) => {
                    let mut ga = g;
                    let n = y.ncols() as f64;
                    for ((mut grow, yrow), inv) in ga.rows_mut().into_iter().zip(y.rows()).zip(inv_std) {
                        let mean_g = grow.sum() / n;
                        let mean_gy: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|d, &yh| *d = inv * (*d - mean_g - yh * mean_gy));
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::GatherRows(a, indices) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &i) in indices.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::GatherCols(a, indices) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for ((i, j), &k) in indices.indexed_iter() {
                        ga[[i, k]] += g[[i, j]];
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        let part = g.slice(s![offset..offset + rows, ..]).to_owned();
                        accumulate(&mut grads[p.0], part);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        let part = g.slice(s![.., offset..offset + cols]).to_owned();
                        accumulate(&mut grads[p.0], part);
                        offset += cols;
                    }
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::CrossEntropy(a, targets, probs) => {
                    let n = targets.len().max(1) as f64;
                    let mut ga = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        ga[[r, t]] -= 1.0;
                    }
                    ga *= g[[0, 0]] / n;
                    accumulate(&mut grads[a.0], ga);
                }
            }
        }
        Gradients::from_vec(param_grads)
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
