//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates vector-Jacobian products.
//! Nodes are appended only after their inputs exist, so the tape is always in
//! topological order.

use crate::error::{FunnelError, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// sqrt(2/pi), the tanh-GeLU scale.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh-GeLU approximation.
pub const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanPool {
        x: Var,
        // (source row, weight) pairs per output row
        taps: Vec<Vec<(usize, f64)>>,
    },
    MaxPool {
        x: Var,
        // flat source element per output element; None for empty windows
        argmax: Vec<Option<usize>>,
    },
    GatherCols(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BceLogits {
        logits: Var,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros of the matching shape when `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_connected(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input (parameter or input we want gradients for).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(FunnelError::dim("matmul_nt", av.shape(), bv.shape()));
        }
        let m = av.dims2().0;
        let n = bv.shape()[0];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = av.row(i);
            for j in 0..n {
                out[i * n + j] = dot(ar, bv.row(j));
            }
        }
        let out = Tensor::new(&[m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(FunnelError::dim("transpose", self.shape(a), &[]));
        }
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(FunnelError::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Add a length-`c` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if self.value(b).len() != c {
            return Err(FunnelError::dim("add_row", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for i in 0..r {
            for (o, &bb) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Tanh-approximated GeLU:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Softmax over the last axis with max subtraction. Columns where
    /// `key_mask` is `false` get exactly zero weight.
    pub fn softmax(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if let Some(m) = key_mask {
            if m.len() != c {
                return Err(FunnelError::dim("softmax mask", self.shape(x), &[m.len()]));
            }
        }
        let xv = self.value(x);
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(FunnelError::Numeric("NaN input to softmax".into()));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let live = |j: usize| key_mask.is_none_or(|m| m[j]);
            let mx = (0..c)
                .filter(|&j| live(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(FunnelError::Numeric(format!(
                    "softmax row {i} has no unmasked finite entry"
                )));
            }
            let orow = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for j in 0..c {
                if live(j) {
                    let e = (row[j] - mx).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Row-wise layer normalization followed by the affine `gamma, beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(FunnelError::dim(
                "layer_norm",
                self.shape(x),
                self.shape(gamma),
            ));
        }
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = xv.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mu) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout with keep-probability `1 - p`. `p == 0` is the
    /// identity and draws nothing from `rng`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(FunnelError::Contract(format!("dropout rate {p} not in [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Rows of `x` picked by `idx` (repeats allowed).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if idx.is_empty() {
            return Err(FunnelError::Contract("select_rows with no rows".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(FunnelError::dim("select_rows", self.shape(x), &[bad]));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(&[idx.len(), c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SelectRows(x, idx.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if len == 0 || start + len > c {
            return Err(FunnelError::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::new(&[r, len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims2(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p);
            if pr != r {
                return Err(FunnelError::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(&[r, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims2(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims2(p);
            if pc != c {
                return Err(FunnelError::dim("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(&[rows, c], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Pool groups of rows. Each output row reduces the listed source rows;
    /// an empty window yields a zero row. Max ties go to the earliest row.
    pub fn pool_rows(&mut self, x: Var, windows: &[Vec<usize>], kind: PoolKind) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if windows.is_empty() {
            return Err(FunnelError::Contract("pool_rows with no windows".into()));
        }
        if windows.iter().flatten().any(|&i| i >= r) {
            return Err(FunnelError::dim("pool_rows", self.shape(x), &[windows.len()]));
        }
        let xv = self.value(x);
        let mut data = vec![0.0; windows.len() * c];
        let op = match kind {
            PoolKind::Mean => {
                let mut taps = Vec::with_capacity(windows.len());
                for (o, w) in windows.iter().enumerate() {
                    let wt = if w.is_empty() { 0.0 } else { 1.0 / w.len() as f64 };
                    for &i in w {
                        axpy(&mut data[o * c..(o + 1) * c], xv.row(i), wt);
                    }
                    taps.push(w.iter().map(|&i| (i, wt)).collect());
                }
                Op::MeanPool { x, taps }
            }
            PoolKind::Max => {
                let mut argmax = vec![None; windows.len() * c];
                for (o, w) in windows.iter().enumerate() {
                    let Some((&first, rest)) = w.split_first() else { continue };
                    for j in 0..c {
                        let mut best = first;
                        for &i in rest {
                            if xv.at(i, j) > xv.at(best, j) {
                                best = i;
                            }
                        }
                        data[o * c + j] = xv.at(best, j);
                        argmax[o * c + j] = Some(best * c + j);
                    }
                }
                Op::MaxPool { x, argmax }
            }
        };
        let out = Tensor::new(&[windows.len(), c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, op, rg))
    }

    /// `out[i][j] = x[i][idx[i][j]]`, with `idx` given row-major as `[r, n]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize], n: usize) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if idx.len() != r * n {
            return Err(FunnelError::dim("gather_cols", self.shape(x), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&k| k >= c) {
            return Err(FunnelError::Contract(format!(
                "gather index {bad} outside table of width {c}"
            )));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * n);
        for i in 0..r {
            let row = xv.row(i);
            data.extend(idx[i * n..(i + 1) * n].iter().map(|&k| row[k]));
        }
        let out = Tensor::new(&[r, n], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GatherCols(x, idx.to_vec()), rg))
    }

    /// Mean of `-log softmax(logits[i])[targets[i]]` over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(logits);
        if targets.len() != r || r == 0 {
            return Err(FunnelError::dim("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(FunnelError::Contract(format!("target {bad} outside {c} classes")));
        }
        let lv = self.value(logits);
        if !lv.all_finite() {
            return Err(FunnelError::Numeric("non-finite logits".into()));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = lv.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / r as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Weighted mean binary cross-entropy on logits:
    /// `sum_i w_i (softplus(z_i) - y_i z_i) / sum_i w_i`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let n = self.value(logits).len();
        if labels.len() != n || weights.len() != n {
            return Err(FunnelError::dim("bce_with_logits", self.shape(logits), &[labels.len()]));
        }
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(FunnelError::Contract("bce with zero total weight".into()));
        }
        let z = self.value(logits).data();
        let loss: f64 = z
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum();
        let out = Tensor::scalar(loss / wsum);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
                weights: weights.iter().map(|w| w / wsum).collect(),
            },
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(FunnelError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        // constants never report a gradient
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let nn = bv.shape()[1];
                // dA = G · Bᵀ
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] += dot(&g[i * nn..(i + 1) * nn], bv.row(p));
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(*b, &mut |gb| {
                    let at = av.transpose();
                    matmul_into(at.data(), g, gb, k, m, nn);
                });
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let nn = bv.shape()[0];
                // dA = G · B
                acc(*a, &mut |ga| matmul_into(g, bv.data(), ga, m, nn, k));
                // dB = Gᵀ · A
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let ar = av.row(i);
                        for j in 0..nn {
                            let gij = g[i * nn + j];
                            if gij != 0.0 {
                                for (o, &x) in gb[j * k..(j + 1) * k].iter_mut().zip(ar) {
                                    *o += gij * x;
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| axpy(ga, g, 1.0));
                acc(*b, &mut |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| axpy(ga, g, 1.0));
                acc(*b, &mut |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, &gg), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gg * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gg), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gg * x;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let c = self.value(*b).len();
                acc(*x, &mut |gx| axpy(gx, g, 1.0));
                acc(*b, &mut |gb| {
                    for chunk in g.chunks(c) {
                        axpy(gb, chunk, 1.0);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| axpy(ga, g, *c)),
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, &gg), &x) in ga.iter_mut().zip(g).zip(xv) {
                        *o += gg * gelu_grad(x);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let s = dot(yr, gr);
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = self.dims2(*x);
                let gm = self.value(*gamma).data();
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let dxhat: Vec<f64> = gr.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dot(&dxhat, hr) / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for chunk in g.chunks(c) {
                        axpy(gb, chunk, 1.0);
                    }
                });
            }
            Op::Dropout(x, mask) => acc(*x, &mut |gx| {
                for ((o, &gg), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gg * m;
                }
            }),
            Op::SelectRows(x, idx) => {
                let c = self.dims2(*x).1;
                acc(*x, &mut |gx| {
                    for (o, &i) in idx.iter().enumerate() {
                        axpy(&mut gx[i * c..(i + 1) * c], &g[o * c..(o + 1) * c], 1.0);
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.dims2(*x);
                let len = node.value.dims2().1;
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        axpy(
                            &mut gx[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                            1.0,
                        );
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2();
                let mut off = 0;
                for &p in parts {
                    let pc = self.dims2(p).1;
                    acc(p, &mut |gp| {
                        for i in 0..r {
                            axpy(
                                &mut gp[i * pc..(i + 1) * pc],
                                &g[i * total + off..i * total + off + pc],
                                1.0,
                            );
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |gp| axpy(gp, &g[off..off + n], 1.0));
                    off += n;
                }
            }
            Op::MeanPool { x, taps } => {
                let c = self.dims2(*x).1;
                acc(*x, &mut |gx| {
                    for (o, t) in taps.iter().enumerate() {
                        for &(src, w) in t {
                            axpy(&mut gx[src * c..(src + 1) * c], &g[o * c..(o + 1) * c], w);
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |gx| {
                for (o, src) in argmax.iter().enumerate() {
                    if let Some(e) = src {
                        gx[*e] += g[o];
                    }
                }
            }),
            Op::GatherCols(x, idx) => {
                let (r, c) = self.dims2(*x);
                let n = idx.len() / r;
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..n {
                            gx[i * c + idx[i * n + j]] += g[i * n + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, c) = self.dims2(*logits);
                let s = g[0] / r as f64;
                acc(*logits, &mut |gl| {
                    for i in 0..r {
                        for j in 0..c {
                            let onehot = if targets[i] == j { 1.0 } else { 0.0 };
                            gl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::BceLogits {
                logits,
                labels,
                weights,
            } => {
                let z = self.value(*logits).data();
                acc(*logits, &mut |gl| {
                    for i in 0..z.len() {
                        gl[i] += g[0] * weights[i] * (sigmoid(z[i]) - labels[i]);
                    }
                });
            }
        }
    }
}

pub fn gelu_scalar(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}
