//! Append-only computation tape with reverse-mode differentiation.
//!
//! Nodes are pushed in evaluation order, so the node index is already a
//! topological order and backward is a single reverse sweep.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// rhs broadcast across the rows of lhs
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Mean(Var, usize),
    Max(Var, usize, Vec<usize>),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Embedding(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-12;

/// Recorded graph of tensor operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    clamp_events: usize,
    fault: Option<&'static str>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Adds a gradient update into the slot for a variable.
type Accumulate<'a> = dyn FnMut(Var, &dyn Fn(&mut [f64])) + 'a;

pub fn gelu(x: f64) -> f64 {
    x * gelu_cdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn matmul_bt_into(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn matmul_at_into(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// In checked mode every kernel output must be finite.
    pub fn checked() -> Self {
        Tape {
            checked: true,
            ..Self::default()
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Times a [`Tape::clamp`] actually moved its input.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Corrupts the backward rule of one kernel. Test hook for verifying that
    /// the gradient checker notices broken derivatives.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kernel: &'static str) {
        self.fault = Some(kernel);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::Model(format!("non-finite output from {name}")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 || self.value(a).rank() != 2 || self.value(b).rank() != 2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum of equal shapes, or a row vector broadcast over the
    /// rows of `a` when `b` matches `a`'s trailing dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(va.shape().to_vec(), data)?;
            return self.push("add", t, Op::Add(a, b), &[a, b]);
        }
        let (r, c) = va.dims2();
        if vb.numel() == c && vb.rows() == 1 {
            let bd = vb.data();
            let data = va
                .data()
                .chunks(c)
                .flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y))
                .collect();
            let t = Tensor::matrix(r, c, data)?;
            return self.push("add", t, Op::AddRow(a, b), &[a, b]);
        }
        Err(self.shape_err("add", a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("sub", a, b));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, t, op, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", x, Op::AddScalar(x), |v| v + s)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    /// `x * Phi(x)` with the exact normal CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map("gelu", x, Op::Gelu(x), gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.map("ln", x, Op::Ln(x), f64::ln)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let moved = self.value(x).data().iter().filter(|&&v| v < lo || v > hi).count();
        self.clamp_events += moved;
        self.map("clamp", x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(usize, usize)> {
        let v = self.value(x);
        if v.rank() != 2 || axis > 1 {
            return Err(Error::Shape {
                op,
                left: v.shape().to_vec(),
                right: vec![axis],
            });
        }
        Ok(v.dims2())
    }

    /// Mean along `axis` of a rank-2 tensor, keeping the reduced dim as 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.check_axis("mean", x, axis)?;
        let v = self.value(x);
        let t = if axis == 0 {
            let mut out = vec![0.0; c];
            for row in v.data().chunks(c) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::matrix(1, c, out)?
        } else {
            let out = v.data().chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect();
            Tensor::matrix(r, 1, out)?
        };
        self.push("mean", t, Op::Mean(x, axis), &[x])
    }

    /// Max along `axis`; ties resolve to the first index.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.check_axis("max", x, axis)?;
        let v = self.value(x);
        let (vals, idx): (Vec<f64>, Vec<usize>) = if axis == 0 {
            (0..c)
                .map(|j| {
                    let mut best = 0;
                    for i in 1..r {
                        if v.at(i, j) > v.at(best, j) {
                            best = i;
                        }
                    }
                    (v.at(best, j), best)
                })
                .unzip()
        } else {
            (0..r)
                .map(|i| {
                    let mut best = 0;
                    for j in 1..c {
                        if v.at(i, j) > v.at(i, best) {
                            best = j;
                        }
                    }
                    (v.at(i, best), best)
                })
                .unzip()
        };
        let t = if axis == 0 {
            Tensor::matrix(1, c, vals)?
        } else {
            Tensor::matrix(r, 1, vals)?
        };
        self.push("max", t, Op::Max(x, axis, idx), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Model("concat of nothing".into()));
        };
        let (r0, c0) = self.check_axis("concat", first, axis)?;
        for &p in parts {
            let (r, c) = self.check_axis("concat", p, axis)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(self.shape_err("concat", first, p));
            }
        }
        let t = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                rows += self.value(p).rows();
            }
            Tensor::matrix(rows, c0, data)?
        } else {
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::matrix(r0, cols, data)?
        };
        self.push("concat", t, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, d) = vt.dims2();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Model(format!("id {id} out of range for table of {v} rows")));
            }
            data.extend_from_slice(vt.row_slice(id));
        }
        let t = Tensor::matrix(ids.len(), d, data)?;
        self.push("embedding", t, Op::Embedding(table, ids.to_vec()), &[table])
    }

    /// Normalizes each row, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if self.value(gamma).numel() != c {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.value(beta).numel() != c {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).data().chunks(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mu) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push("layer_norm", t, op, &[x, gamma, beta])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v.at(i, j);
            }
        }
        let t = Tensor::matrix(c, r, data)?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start >= end || end > r {
            return Err(Error::Shape {
                op: "slice_rows",
                left: v.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let t = Tensor::matrix(end - start, c, v.data()[start * c..end * c].to_vec())?;
        self.push("slice_rows", t, Op::SliceRows(x, start), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start >= end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: v.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&v.row_slice(i)[start..end]);
        }
        let t = Tensor::matrix(r, end - start, data)?;
        self.push("slice_cols", t, Op::SliceCols(x, start), &[x])
    }

    /// Picks `x[i, idx[i]]` for every row, giving an `[r, 1]` column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::Shape {
                op: "gather",
                left: v.shape().to_vec(),
                right: idx.to_vec(),
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.at(i, j)).collect();
        let t = Tensor::matrix(r, 1, data)?;
        self.push("gather", t, Op::Gather(x, idx.to_vec()), &[x])
    }

    /// Inverted dropout. `p == 0` is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push("dropout", t, Op::Dropout(x, mask), &[x])
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::Shape {
                op: "backward (output must be scalar)",
                left: self.shape(output).to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        let fault = |k: &str| self.fault == Some(k);
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
            f(slot.data_mut());
        };
        let elementwise = |x: Var, d: &dyn Fn(usize) -> f64, acc: &mut Accumulate| {
            acc(x, &|s: &mut [f64]| {
                for (i, s) in s.iter_mut().enumerate() {
                    *s += gd[i] * d(i);
                }
            });
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| matmul_bt_into(gd, bd, s, m, k, n));
                acc(*b, &|s| matmul_at_into(ad, gd, s, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
            }
            Op::AddRow(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                let c = self.value(*b).numel();
                acc(*b, &|s| {
                    for row in gd.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(gd).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                elementwise(*a, &|i| bd[i], &mut acc);
                elementwise(*b, &|i| ad[i], &mut acc);
            }
            Op::Scale(x, s) => elementwise(*x, &|_| *s, &mut acc),
            Op::AddScalar(x) => elementwise(*x, &|_| 1.0, &mut acc),
            Op::Tanh(x) => {
                let bad = fault("tanh");
                elementwise(*x, &|i| if bad { 1.0 - out[i] } else { 1.0 - out[i] * out[i] }, &mut acc)
            }
            Op::Sigmoid(x) => elementwise(*x, &|i| out[i] * (1.0 - out[i]), &mut acc),
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                elementwise(*x, &|i| gelu_cdf(xd[i]) + xd[i] * gelu_pdf(xd[i]), &mut acc)
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                elementwise(*x, &|i| if xd[i] > 0.0 { 1.0 } else { 0.0 }, &mut acc)
            }
            Op::Ln(x) => {
                let xd = self.value(*x).data();
                elementwise(*x, &|i| 1.0 / xd[i], &mut acc)
            }
            Op::Clamp(x, lo, hi) => {
                let xd = self.value(*x).data();
                elementwise(*x, &|i| if xd[i] < *lo || xd[i] > *hi { 0.0 } else { 1.0 }, &mut acc)
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                acc(*x, &|s| {
                    for ((srow, yrow), grow) in s.chunks_mut(c).zip(out.chunks(c)).zip(gd.chunks(c)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Mean(x, axis) => {
                let (r, c) = self.value(*x).dims2();
                let axis = *axis;
                acc(*x, &|s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += if axis == 0 { gd[j] / r as f64 } else { gd[i] / c as f64 };
                        }
                    }
                });
            }
            Op::Max(x, axis, idx) => {
                let c = self.value(*x).cols();
                let axis = *axis;
                acc(*x, &|s| {
                    for (k, &best) in idx.iter().enumerate() {
                        if axis == 0 {
                            s[best * c + k] += gd[k];
                        } else {
                            s[k * c + best] += gd[k];
                        }
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &|s| s.iter_mut().for_each(|s| *s += gd[0])),
            Op::Concat(parts, axis) => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2();
                    let off = offset;
                    if *axis == 0 {
                        acc(p, &|s| {
                            s.iter_mut().zip(&gd[off * c..(off + r) * c]).for_each(|(s, g)| *s += g)
                        });
                        offset += r;
                    } else {
                        acc(p, &|s| {
                            for i in 0..r {
                                for j in 0..c {
                                    s[i * c + j] += gd[i * total_cols + off + j];
                                }
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let d = node.value.cols();
                acc(*table, &|s| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            s[id * d + j] += gd[row * d + j];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gam = self.value(*gamma).data();
                acc(*x, &|s| {
                    for (i, is) in inv_std.iter().enumerate() {
                        let row = i * c..(i + 1) * c;
                        let dxh: Vec<f64> = gd[row.clone()].iter().zip(gam).map(|(g, w)| g * w).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(&xhat[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            s[i * c + j] +=
                                is / c as f64 * (c as f64 * dxh[j] - sum_d - xhat[i * c + j] * sum_dx);
                        }
                    }
                });
                acc(*gamma, &|s| {
                    for (k, g) in gd.iter().enumerate() {
                        s[k % c] += g * xhat[k];
                    }
                });
                acc(*beta, &|s| {
                    for (k, g) in gd.iter().enumerate() {
                        s[k % c] += g;
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                acc(*x, &|s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let c = node.value.cols();
                let off = start * c;
                acc(*x, &|s| s[off..off + gd.len()].iter_mut().zip(gd).for_each(|(s, g)| *s += g));
            }
            Op::SliceCols(x, start) => {
                let (r, w) = node.value.dims2();
                let c = self.value(*x).cols();
                acc(*x, &|s| {
                    for i in 0..r {
                        for j in 0..w {
                            s[i * c + start + j] += gd[i * w + j];
                        }
                    }
                });
            }
            Op::Gather(x, idx) => {
                let c = self.value(*x).cols();
                acc(*x, &|s| {
                    for (i, &j) in idx.iter().enumerate() {
                        s[i * c + j] += gd[i];
                    }
                });
            }
            Op::Dropout(x, mask) => elementwise(*x, &|i| mask[i], &mut acc),
        }
    }
}
