use std::collections::HashMap;
use std::sync::Arc;

use super::Tensor;
use crate::error::{bail, Error, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Square,
    Sqrt,
    Recip,
}

/// Matrix axis. `Rows` reduces or concatenates along the row index (axis 0),
/// `Cols` along the column index (axis 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(UnaryKind, Var),
    Softmax(Var, Axis),
    Concat(Vec<Var>, Axis),
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad_left: usize,
    },
    Transpose(Var),
    Pick(Var, usize),
    Reshape(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Record of executed operations. Nodes are appended in execution order, so
/// every input index is smaller than the index of the node that consumes it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn check_finite(name: &str, data: &[f64]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        bail!(Numeric, "{name} produced non-finite value {} at index {pos}", data[pos]);
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        check_finite(name, value.data())?;
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Records (once per tape) a trainable parameter from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows() {
            bail!(
                Dimension,
                "matmul of {:?} by {:?}: inner dimensions disagree",
                av.shape(),
                bv.shape()
            );
        }
        let (m, k) = dims2(av);
        let n = bv.cols();
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    /// `x · wᵀ + b` for `x: m×in`, `w: out×in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, inp) = dims2(xv);
        if wv.ndim() != 2 || wv.cols() != inp {
            bail!(Dimension, "linear input {:?} does not match weight {:?}", xv.shape(), wv.shape());
        }
        let out_w = wv.rows();
        if let Some(b) = b {
            if self.value(b).numel() != out_w {
                bail!(
                    Dimension,
                    "linear bias {:?} does not match weight {:?}",
                    self.value(b).shape(),
                    wv.shape()
                );
            }
        }
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![0.0; m * out_w];
        for i in 0..m {
            let xr = &xd[i * inp..(i + 1) * inp];
            for o in 0..out_w {
                let wr = &wd[o * inp..(o + 1) * inp];
                out[i * out_w + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(out_w) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        self.push(Tensor::matrix(m, out_w, out)?, Op::Linear { x, w, b }, "linear")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Dimension, "{what} of {:?} and {:?}", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn broadcast_row(&mut self, a: Var, r: Var, mul: bool) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        let (m, n) = dims2(av);
        if rv.numel() != n {
            bail!(Dimension, "row broadcast of {:?} over {:?}", rv.shape(), av.shape());
        }
        let rd = rv.data();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &x) in row.iter_mut().zip(rd) {
                if mul {
                    *o *= x;
                } else {
                    *o += x;
                }
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        if mul {
            self.push(t, Op::MulRow(a, r), "mul_row")
        } else {
            self.push(t, Op::AddRow(a, r), "add_row")
        }
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.broadcast_row(a, r, false)
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.broadcast_row(a, r, true)
    }

    /// Scales row `i` of an `m×n` matrix by entry `i` of an `m`-vector.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(c));
        let (m, n) = dims2(av);
        if cv.numel() != m {
            bail!(Dimension, "column broadcast of {:?} over {:?}", cv.shape(), av.shape());
        }
        let cd = cv.data();
        let mut out = av.data().to_vec();
        for (row, &s) in out.chunks_mut(n).zip(cd) {
            for o in row {
                *o *= s;
            }
        }
        self.push(Tensor::matrix(m, n, out)?, Op::MulCol(a, c), "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v + s);
        self.push(t, Op::AddScalar(a), "add_scalar")
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let av = self.value(a);
        match kind {
            UnaryKind::Log => {
                if let Some(bad) = av.data().iter().find(|&&v| v <= 0.0) {
                    bail!(Domain, "log of non-positive value {bad}");
                }
            }
            UnaryKind::Sqrt => {
                if let Some(bad) = av.data().iter().find(|&&v| v < 0.0) {
                    bail!(Domain, "sqrt of negative value {bad}");
                }
            }
            UnaryKind::Recip if av.data().contains(&0.0) => {
                bail!(Domain, "reciprocal of zero");
            }
            _ => {}
        }
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Abs => f64::abs,
            UnaryKind::Square => |v| v * v,
            UnaryKind::Sqrt => f64::sqrt,
            UnaryKind::Recip => |v| 1.0 / v,
        };
        let t = av.map(f);
        self.push(t, Op::Unary(kind, a), "unary")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    /// Max-subtracted softmax. `Axis::Cols` normalizes each row (the usual
    /// case for logits), `Axis::Rows` normalizes each column.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = dims2(av);
        let mut out = av.data().to_vec();
        match axis {
            Axis::Cols => {
                for i in 0..m {
                    softmax_strided(&mut out, i * n, 1, n);
                }
            }
            Axis::Rows => {
                for c in 0..n {
                    softmax_strided(&mut out, c, n, m);
                }
            }
        }
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(a, axis), "softmax")
    }

    /// Concatenates matrices along an axis.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Dimension, "concat of zero parts");
        };
        if parts.len() == 1 {
            // Still record a node so the result is a distinct handle.
            let t = self.value(first).clone();
            return self.push(t, Op::Concat(parts.to_vec(), axis), "concat");
        }
        let shapes: Vec<(usize, usize)> = parts.iter().map(|&p| dims2(self.value(p))).collect();
        let out = match axis {
            Axis::Rows => {
                let n = shapes[0].1;
                if shapes.iter().any(|s| s.1 != n) {
                    bail!(Dimension, "concat along rows with column counts {shapes:?}");
                }
                let rows: usize = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(rows * n);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, n, data)?
            }
            Axis::Cols => {
                let m = shapes[0].0;
                if shapes.iter().any(|s| s.0 != m) {
                    bail!(Dimension, "concat along columns with row counts {shapes:?}");
                }
                let cols: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(m * cols);
                for i in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::matrix(m, cols, data)?
            }
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), "concat")
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = dims2(xv);
        if len == 0 || start + len > m {
            bail!(Dimension, "row slice {start}..{} of {:?}", start + len, xv.shape());
        }
        let data = xv.data()[start * n..(start + len) * n].to_vec();
        self.push(Tensor::matrix(len, n, data)?, Op::SliceRows { x, start }, "slice_rows")
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Column means of an `m×n` matrix, as a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = dims2(av);
        let mut out = vec![0.0; n];
        for row in av.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(a), "mean_rows")
    }

    /// Column maxima of an `m×n` matrix. Ties resolve to the earliest row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, n) = dims2(av);
        let mut best = av.row_slice(0).to_vec();
        let mut argmax = vec![0usize; n];
        for (i, row) in av.data().chunks(n).enumerate().skip(1) {
            for c in 0..n {
                if row[c] > best[c] {
                    best[c] = row[c];
                    argmax[c] = i;
                }
            }
        }
        self.push(Tensor::matrix(1, n, best)?, Op::MaxRows { x: a, argmax }, "max_rows")
    }

    /// Sliding-window unfold for 1-D convolution over time. Input is `T×C`;
    /// output row `t` holds input rows `t·stride − pad_left ..` (`kernel` of
    /// them) laid side by side, zero where the window leaves the sequence.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad_left: usize, out_len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t_in, c) = dims2(xv);
        if kernel == 0 || stride == 0 || out_len == 0 {
            bail!(Dimension, "unfold with kernel {kernel}, stride {stride}, output length {out_len}");
        }
        let width = kernel * c;
        let mut out = vec![0.0; out_len * width];
        for t in 0..out_len {
            for j in 0..kernel {
                let src = t * stride + j;
                if src < pad_left || src - pad_left >= t_in {
                    continue;
                }
                let s = src - pad_left;
                out[t * width + j * c..t * width + (j + 1) * c].copy_from_slice(xv.row_slice(s));
            }
        }
        self.push(
            Tensor::matrix(out_len, width, out)?,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad_left,
            },
            "unfold",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = dims2(av);
        let d = av.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), "transpose")
    }

    /// Scalar element at a flat row-major index.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.value(a);
        if index >= av.numel() {
            bail!(Dimension, "index {index} out of range for {:?}", av.shape());
        }
        let v = av.data()[index];
        self.push(Tensor::scalar(v), Op::Pick(a, index), "pick")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated
    /// additively; nodes the loss does not depend on get no gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            bail!(Contract, "backward requires a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let values = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g)))
            .map(|g| g.transpose())
            .collect::<Result<Vec<_>>>()?;
        for (i, g) in values.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
                }
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients { values, params })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = dims2(av);
                let n = bv.cols();
                let (ad, bd) = (av.data(), bv.data());
                accumulate_with(&mut grads[a.0], m * k, |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                accumulate_with(&mut grads[b.0], k * n, |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            let grow = &g[i * n..(i + 1) * n];
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, inp) = dims2(xv);
                let out_w = wv.rows();
                let (xd, wd) = (xv.data(), wv.data());
                accumulate_with(&mut grads[x.0], m * inp, |gx| {
                    for i in 0..m {
                        for o in 0..out_w {
                            let go = g[i * out_w + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (dst, wv) in gx[i * inp..(i + 1) * inp].iter_mut().zip(&wd[o * inp..(o + 1) * inp]) {
                                *dst += go * wv;
                            }
                        }
                    }
                });
                accumulate_with(&mut grads[w.0], out_w * inp, |gw| {
                    for i in 0..m {
                        for o in 0..out_w {
                            let go = g[i * out_w + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (dst, xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(&xd[i * inp..(i + 1) * inp]) {
                                *dst += go * xv;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    accumulate_with(&mut grads[b.0], out_w, |gb| {
                        for row in g.chunks(out_w) {
                            for (dst, v) in gb.iter_mut().zip(row) {
                                *dst += v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate(&mut grads[b.0], g);
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate_with(&mut grads[b.0], g.len(), |gb| {
                    for (d, v) in gb.iter_mut().zip(g) {
                        *d -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                accumulate_with(&mut grads[a.0], g.len(), |ga| {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                });
                accumulate_with(&mut grads[b.0], g.len(), |gb| {
                    for ((d, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::AddRow(a, r) => {
                accumulate(&mut grads[a.0], g);
                let n = out.cols();
                accumulate_with(&mut grads[r.0], n, |gr| {
                    for row in g.chunks(n) {
                        for (d, v) in gr.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::MulRow(a, r) => {
                let n = out.cols();
                let (ad, rd) = (self.value(*a).data(), self.value(*r).data());
                accumulate_with(&mut grads[a.0], g.len(), |ga| {
                    for (i, (d, gv)) in ga.iter_mut().zip(g).enumerate() {
                        *d += gv * rd[i % n];
                    }
                });
                accumulate_with(&mut grads[r.0], n, |gr| {
                    for (i, (gv, av)) in g.iter().zip(ad).enumerate() {
                        gr[i % n] += gv * av;
                    }
                });
            }
            Op::MulCol(a, c) => {
                let n = out.cols();
                let (ad, cd) = (self.value(*a).data(), self.value(*c).data());
                accumulate_with(&mut grads[a.0], g.len(), |ga| {
                    for (i, (d, gv)) in ga.iter_mut().zip(g).enumerate() {
                        *d += gv * cd[i / n];
                    }
                });
                accumulate_with(&mut grads[c.0], cd.len(), |gc| {
                    for (i, (gv, av)) in g.iter().zip(ad).enumerate() {
                        gc[i / n] += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => {
                accumulate_with(&mut grads[a.0], g.len(), |ga| {
                    for (d, gv) in ga.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                });
            }
            Op::AddScalar(a) => accumulate(&mut grads[a.0], g),
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = out.data();
                accumulate_with(&mut grads[a.0], g.len(), |ga| {
                    for i in 0..g.len() {
                        let d = match kind {
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Exp => y[i],
                            UnaryKind::Log => 1.0 / x[i],
                            UnaryKind::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Square => 2.0 * x[i],
                            UnaryKind::Sqrt => {
                                if y[i] > 0.0 {
                                    0.5 / y[i]
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Recip => -y[i] * y[i],
                        };
                        ga[i] += g[i] * d;
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (m, n) = dims2(out);
                let y = out.data();
                accumulate_with(&mut grads[a.0], g.len(), |ga| match axis {
                    Axis::Cols => {
                        for i in 0..m {
                            let r = i * n..(i + 1) * n;
                            let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                            for j in r {
                                ga[j] += y[j] * (g[j] - dot);
                            }
                        }
                    }
                    Axis::Rows => {
                        for c in 0..n {
                            let dot: f64 = (0..m).map(|i| g[i * n + c] * y[i * n + c]).sum();
                            for i in 0..m {
                                let j = i * n + c;
                                ga[j] += y[j] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                if parts.len() == 1 {
                    accumulate(&mut grads[parts[0].0], g);
                    return;
                }
                match axis {
                    Axis::Rows => {
                        let mut offset = 0;
                        for p in parts {
                            let len = self.value(*p).numel();
                            accumulate(&mut grads[p.0], &g[offset..offset + len]);
                            offset += len;
                        }
                    }
                    Axis::Cols => {
                        let (m, total) = dims2(out);
                        let mut col = 0;
                        for p in parts {
                            let w = self.value(*p).cols();
                            accumulate_with(&mut grads[p.0], m * w, |gp| {
                                for i in 0..m {
                                    for j in 0..w {
                                        gp[i * w + j] += g[i * total + col + j];
                                    }
                                }
                            });
                            col += w;
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = out.cols();
                let len = self.value(*x).numel();
                accumulate_with(&mut grads[x.0], len, |gx| {
                    for (d, v) in gx[start * n..start * n + g.len()].iter_mut().zip(g) {
                        *d += v;
                    }
                });
            }
            Op::Sum(a) => {
                let len = self.value(*a).numel();
                accumulate_with(&mut grads[a.0], len, |ga| {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::Mean(a) => {
                let len = self.value(*a).numel();
                let s = g[0] / len as f64;
                accumulate_with(&mut grads[a.0], len, |ga| {
                    for d in ga.iter_mut() {
                        *d += s;
                    }
                });
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let (m, n) = dims2(av);
                accumulate_with(&mut grads[a.0], m * n, |ga| {
                    for (i, d) in ga.iter_mut().enumerate() {
                        *d += g[i % n] / m as f64;
                    }
                });
            }
            Op::MaxRows { x, argmax } => {
                let xv = self.value(*x);
                let n = xv.cols();
                accumulate_with(&mut grads[x.0], xv.numel(), |gx| {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * n + c] += g[c];
                    }
                });
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad_left,
            } => {
                let xv = self.value(*x);
                let (t_in, c) = dims2(xv);
                let out_len = out.rows();
                let width = kernel * c;
                accumulate_with(&mut grads[x.0], t_in * c, |gx| {
                    for t in 0..out_len {
                        for j in 0..*kernel {
                            let src = t * stride + j;
                            if src < *pad_left || src - pad_left >= t_in {
                                continue;
                            }
                            let s = src - pad_left;
                            let from = &g[t * width + j * c..t * width + (j + 1) * c];
                            for (d, v) in gx[s * c..(s + 1) * c].iter_mut().zip(from) {
                                *d += v;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(self.value(*a));
                accumulate_with(&mut grads[a.0], m * n, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Pick(a, index) => {
                let len = self.value(*a).numel();
                accumulate_with(&mut grads[a.0], len, |ga| ga[*index] += g[0]);
            }
            Op::Reshape(a) => accumulate(&mut grads[a.0], g),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Stabilized softmax over `data[start], data[start+stride], ...` (`len` items).
fn softmax_strided(data: &mut [f64], start: usize, stride: usize, len: usize) {
    let idx = (0..len).map(|i| start + i * stride);
    let max = idx.clone().fold(f64::NEG_INFINITY, |m, j| m.max(data[j]));
    let mut total = 0.0;
    for j in idx.clone() {
        data[j] = (data[j] - max).exp();
        total += data[j];
    }
    for j in idx {
        data[j] /= total;
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    values: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.values.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.get(v))
    }

    /// Parameters that received a gradient, in id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().filter_map(|&(p, v)| self.get(v).map(|g| (p, g)))
    }
}
