//! Reverse-mode tape.
//!
//! A [`Graph`] records every op of one forward pass as a node in execution
//! order. Nodes are addressed by [`Var`] handles; parameters enter the graph
//! through [`Graph::param`] under a [`ParamKey`] so their gradients can be
//! read back after [`Graph::backward`]. One graph per example keeps the
//! batch dimension out of every kernel.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::functional::{self, PROB_EPS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a parameter tensor: `group` separates models sharing a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u8,
    pub index: usize,
}

impl ParamKey {
    pub fn new(group: u8, index: usize) -> Self {
        Self { group, index }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    Sigmoid(Var),
    Bce {
        p: Var,
        label: bool,
    },
    Sum(Var),
    Mean(Var),
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: HashMap<ParamKey, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    pub fn param(&self, key: ParamKey) -> Option<Tensor> {
        self.params.get(&key).and_then(|&v| self.get(v))
    }

    /// Adds this pass's gradient for every parameter of `group` into `acc`.
    /// Parameters that did not take part are left untouched.
    pub fn accumulate_group(&self, group: u8, acc: &mut [Tensor]) {
        for (key, &v) in &self.params {
            if key.group != group {
                continue;
            }
            if let Some(g) = &self.grads[v.0] {
                for (a, b) in acc[key.index].data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a [n,k] · b[m,k]^T`
fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[n,k]^T · b[n,m]`
fn matmul_at(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].value.rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].value.cols()
    }

    /// Leaf whose gradient is tracked iff `value.requires_grad()`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let needs = value.requires_grad();
        self.push(value, Op::Leaf, needs)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_grad(false), Op::Leaf, false)
    }

    /// Brings a parameter into the graph. Repeated calls with the same key
    /// return the same node, so gradients from every use accumulate there.
    pub fn param(&mut self, key: ParamKey, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param, true);
        self.params.insert(key, v);
        v
    }

    pub fn param_var(&self, key: ParamKey) -> Option<Var> {
        self.params.get(&key).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = (self.rows(a), self.cols(a));
        let (k2, m) = (self.rows(b), self.cols(b));
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let out = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&[n, m], out).unwrap(), Op::MatMul(a, b), needs)
    }

    /// `a · b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = (self.rows(a), self.cols(a));
        let (m, k2) = (self.rows(b), self.cols(b));
        assert_eq!(k, k2, "matmul_bt inner dims {k} vs {k2}");
        let out = matmul_bt(self.value(a).data(), self.value(b).data(), n, k, m);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&[n, m], out).unwrap(), Op::MatMulBt(a, b), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Add(a, b), needs)
    }

    /// Adds a length-`cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let cols = self.cols(x);
        assert_eq!(self.value(row).len(), cols, "add_row width");
        let r = self.value(row).data().to_vec();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|c| c.iter().zip(&r).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(row);
        self.push(Tensor::new(&shape, data).unwrap(), Op::AddRow(x, row), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut value = self.value(x).clone().with_grad(false);
        value.scale_assign(k);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, k), needs)
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn offset(&mut self, x: Var, c: &Tensor) -> Var {
        assert_eq!(self.shape(x), c.shape(), "offset shapes");
        let mut value = self.value(x).clone().with_grad(false);
        value.add_assign(c);
        let needs = self.needs(x);
        self.push(value, Op::Offset(x), needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Gelu(x), needs)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let cols = self.cols(x);
        assert_eq!(self.value(gain).len(), cols);
        assert_eq!(self.value(bias).len(), cols);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(self.value(x).len());
        let mut rstd = Vec::with_capacity(self.rows(x));
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Tensor::new(&shape, out).unwrap(),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone().with_grad(false);
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            functional::softmax_in_place(row);
        }
        let needs = self.needs(x);
        self.push(value, Op::Softmax(x), needs)
    }

    /// Row-wise softmax where `allowed[r * cols + c] == false` entries get
    /// exactly zero probability. Every row must allow at least one entry.
    pub fn masked_softmax(&mut self, x: Var, allowed: &[bool]) -> Var {
        assert_eq!(allowed.len(), self.value(x).len(), "mask size");
        let mut value = self.value(x).clone().with_grad(false);
        let cols = value.cols();
        for (row, keep) in value.data_mut().chunks_mut(cols).zip(allowed.chunks(cols)) {
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "masked_softmax row with no allowed entry");
            let mut sum = 0.0;
            for (v, &k) in row.iter_mut().zip(keep) {
                *v = if k { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        // the softmax backward only reads the output, and masked outputs are 0
        let needs = self.needs(x);
        self.push(value, Op::Softmax(x), needs)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let cols = self.cols(table);
        let rows = self.rows(table);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < rows, "gather id {id} out of {rows}");
            data.extend_from_slice(self.value(table).row_slice(id));
        }
        let needs = self.needs(table);
        self.push(
            Tensor::new(&[ids.len(), cols], data).unwrap(),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.cols(parts[0]);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.cols(p), cols, "concat_rows width");
            data.extend_from_slice(self.value(p).data());
            rows += self.rows(p);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(&[rows, cols], data).unwrap(),
            Op::ConcatRows(parts.to_vec()),
            needs,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let cols = self.cols(x);
        assert!(start + len <= self.rows(x), "slice_rows range");
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(&[len, cols], data).unwrap(),
            Op::SliceRows { x, start },
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.rows(parts[0]);
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                assert_eq!(self.rows(p), rows, "concat_cols height");
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(&[rows, total], data).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            needs,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let cols = self.cols(x);
        assert!(start + len <= cols, "slice_cols range");
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..start + len].to_vec())
            .collect();
        let rows = self.rows(x);
        let needs = self.needs(x);
        self.push(
            Tensor::new(&[rows, len], data).unwrap(),
            Op::SliceCols { x, start },
            needs,
        )
    }

    /// Mean token-level cross entropy over the unmasked rows of `logits`.
    /// Returns a scalar node; with an all-false mask the value is 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let ce = functional::cross_entropy_loss(self.value(logits), targets, mask)?;
        let cols = self.cols(logits);
        let mut probs = self.value(logits).data().to_vec();
        for row in probs.chunks_mut(cols) {
            functional::softmax_in_place(row);
        }
        let count = mask.iter().filter(|&&m| m).count();
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(ce.loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            needs,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| functional::sigmoid(v))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Sigmoid(x), needs)
    }

    /// Binary cross entropy of a single clamped probability.
    pub fn bce(&mut self, p: Var, label: bool) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "bce expects one probability, got shape {:?}",
                self.shape(p)
            )));
        }
        let value = functional::binary_cross_entropy(self.value(p).item(), label);
        let needs = self.needs(p);
        Ok(self.push(Tensor::scalar(value), Op::Bce { p, label }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Forward: one-hot of each row's argmax (ties to the lowest index).
    /// Backward: the incoming gradient passes to `x` unchanged.
    pub fn straight_through(&mut self, x: Var) -> Var {
        let cols = self.cols(x);
        let mut value = Tensor::zeros(self.shape(x));
        for (r, a) in self.value(x).argmax_rows().into_iter().enumerate() {
            value.data_mut()[r * cols + a] = 1.0;
        }
        let needs = self.needs(x);
        self.push(value, Op::StraightThrough(x), needs)
    }

    /// Reverse sweep from the scalar `loss`. Each node is visited once, in
    /// reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.rows(*a), self.cols(*a));
                let m = self.cols(*b);
                if self.needs(*a) {
                    acc(*a, matmul_bt(g, self.value(*b).data(), n, m, k));
                }
                if self.needs(*b) {
                    acc(*b, matmul_at(self.value(*a).data(), g, n, k, m));
                }
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = (self.rows(*a), self.cols(*a));
                let m = self.rows(*b);
                if self.needs(*a) {
                    acc(*a, matmul(g, self.value(*b).data(), n, m, k));
                }
                if self.needs(*b) {
                    acc(*b, matmul_at(g, self.value(*a).data(), n, m, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(x, row) => {
                acc(*x, g.to_vec());
                let cols = self.cols(*x);
                let mut dr = vec![0.0; cols];
                for chunk in g.chunks(cols) {
                    for (d, v) in dr.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc(*row, dr);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                acc(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(x, k) => acc(*x, g.iter().map(|v| v * k).collect()),
            Op::Offset(x) => acc(*x, g.to_vec()),
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, g.iter().zip(xv).map(|(g, &x)| g * gelu_grad(x)).collect());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = self.cols(*x);
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for (r, (grow, hrow)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..cols {
                        let dh = grow[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                    }
                    mean_dh /= cols as f64;
                    mean_dh_h /= cols as f64;
                    for j in 0..cols {
                        let dh = grow[j] * gv[j];
                        dx[r * cols + j] = rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gain, dgain);
                acc(*bias, dbias);
            }
            Op::Softmax(x) => {
                let cols = node.value.cols();
                let y = node.value.data();
                let mut dx = vec![0.0; g.len()];
                for ((d, yr), gr) in dx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Gather { table, ids } => {
                let cols = self.cols(*table);
                let mut dt = vec![0.0; self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..cols {
                        dt[id * cols + j] += g[r * cols + j];
                    }
                }
                acc(*table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.cols(*x);
                let mut dx = vec![0.0; self.value(*x).len()];
                dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.cols(p);
                    let d: Vec<f64> = g
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + c].to_vec())
                        .collect();
                    acc(p, d);
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.cols(*x);
                let len = node.value.cols();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, chunk) in g.chunks(len).enumerate() {
                    dx[r * cols + start..r * cols + start + len].copy_from_slice(chunk);
                }
                acc(*x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let cols = self.cols(*logits);
                let mut dx = vec![0.0; probs.len()];
                if *count > 0 {
                    let k = g[0] / *count as f64;
                    for (r, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
                        if !keep {
                            continue;
                        }
                        for j in 0..cols {
                            dx[r * cols + j] = k * probs[r * cols + j];
                        }
                        dx[r * cols + t] -= k;
                    }
                }
                acc(*logits, dx);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Bce { p, label } => {
                let pv = self.value(*p).item();
                let d = if pv <= PROB_EPS || pv >= 1.0 - PROB_EPS {
                    0.0
                } else if *label {
                    -1.0 / pv
                } else {
                    1.0 / (1.0 - pv)
                };
                acc(*p, vec![g[0] * d]);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
            Op::StraightThrough(x) => acc(*x, g.to_vec()),
        }
    }
}

