use std::borrow::Cow;

use super::kernels::{self, Conv1dDims, Conv2dDims, GruCache, GruDims};
use super::{dim_err, ParamGrads, ParamId, ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// Floor applied to the probability inside the cross-entropy log.
pub const CE_FLOOR: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Relu { x: Var },
    Elementwise { x: Var, derivative: fn(T) -> T },
    Softmax { x: Var },
    /// Row-major concatenation; covers both column concat of `1×D` parts
    /// and row stacking of `1×H` parts.
    Join { parts: Vec<Var> },
    Row { x: Var, index: usize },
    Reshape { x: Var },
    CrossEntropy { probs: Var, label: usize },
    Conv1d { x: Var, w: Var, b: Var, dims: Conv1dDims },
    Conv2d { x: Var, w: Var, b: Var, dims: Conv2dDims },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var },
    Gru { x: Var, h0: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var, dims: GruDims, cache: Box<GruCache<T>> },
}

struct Node<'p, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order of the graph.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    params: Option<&'p ParamStore<T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: None }
    }

    /// A tape whose [`Tape::param`] leaves borrow from `store`.
    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self { nodes: Vec::new(), params: Some(store) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape matches value")
    }

    fn push_node(&mut self, op_name: &'static str, shape: Vec<usize>, value: Cow<'p, [T]>, op: Op<T>, requires_grad: bool, param: Option<ParamId>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        // parameter leaves are not re-scanned; a non-finite weight surfaces
        // in the first op that consumes it
        if param.is_none() && !value.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { shape, value, op, requires_grad, param });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(op_name, shape, Cow::Owned(value), op, rg, None)
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push_node("input", shape, Cow::Owned(t.into_data()), Op::Leaf, false, None)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push_node("variable", shape, Cow::Owned(t.into_data()), Op::Leaf, true, None)
    }

    /// Leaf borrowing a parameter's current value from the bound store.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self.params.ok_or(TensorError::NoParams)?;
        let p = store.get(id);
        self.push_node("param", p.tensor.shape().to_vec(), Cow::Borrowed(p.tensor.data()), Op::Leaf, true, Some(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, Op::Add { a, b }, &[a, b])
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let n = *sx.last().unwrap_or(&1);
        if sx.len() != 2 || self.value(bias).len() != n {
            return dim_err("add_row", format!("bias {:?} does not match rows of {sx:?}", self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self.value(x).chunks(n).flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c)).collect();
        let shape = sx.to_vec();
        self.push("add_row", shape, out, Op::AddRow { x, bias }, &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push("sum", vec![], vec![s], Op::Sum { x }, &[x])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, out, op, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, kernels::sigmoid, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu { x })
    }

    /// Elementwise map with a caller-supplied derivative `df(x)`.
    pub fn elementwise(&mut self, x: Var, f: fn(T) -> T, derivative: fn(T) -> T) -> Result<Var> {
        self.unary("elementwise", x, f, Op::Elementwise { x, derivative })
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or(TensorError::Empty("softmax"))?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x }, &[x])
    }

    fn join(&mut self, name: &'static str, parts: &[Var], shape: Vec<usize>) -> Result<Var> {
        let mut out = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(name, shape, out, Op::Join { parts: parts.to_vec() }, parts)
    }

    /// Order-preserving concatenation of `1×Dᵢ` row vectors into `1×ΣDᵢ`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != 1 {
                return dim_err("concat", format!("expected a 1×D row vector, got {s:?}"));
            }
            total += s[1];
        }
        self.join("concat", parts, vec![1, total])
    }

    /// Stacks `1×H` rows into a `k×H` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Empty("stack_rows"))?;
        let width = self.value(first).len();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != 1 || s[1] != width {
                return dim_err("stack_rows", format!("expected 1×{width}, got {s:?}"));
            }
        }
        self.join("stack_rows", parts, vec![parts.len(), width])
    }

    /// Row `index` of a matrix, as `1×cols`.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || index >= s[0] {
            return dim_err("row", format!("row {index} of {s:?}"));
        }
        let cols = s[1];
        let out = self.value(x)[index * cols..(index + 1) * cols].to_vec();
        self.push("row", vec![1, cols], out, Op::Row { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return dim_err("reshape", format!("{:?} to {shape:?}", self.shape(x)));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape { x }, &[x])
    }

    /// `-ln(max(probs[label], 1e-12))` for a `1×C` probability row.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let classes = self.value(probs).len();
        if label >= classes {
            return Err(TensorError::Label { label, classes });
        }
        let p = self.value(probs)[label].max(T::cst(CE_FLOOR));
        self.push("cross_entropy", vec![], vec![-p.ln()], Op::CrossEntropy { probs, label }, &[probs])
    }

    /// `y = xW + b` for `x: m×D`, `W: D×M`, `b: M`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Cross-correlation of `x: C_in×L` with `w: C_out×C_in×K` plus bias `b: C_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] || self.value(b).len() != sw[0] {
            return dim_err("conv1d", format!("input {sx:?}, weight {sw:?}, bias {:?}", self.shape(b)));
        }
        let Some(out_len) = kernels::conv1d_out_len(sx[1], sw[2], stride, padding) else {
            return dim_err("conv1d", format!("kernel {} exceeds padded input {sx:?} (padding {padding}, stride {stride})", sw[2]));
        };
        let dims = Conv1dDims { c_in: sx[0], len: sx[1], c_out: sw[0], kernel: sw[2], stride, padding, out_len };
        let out = kernels::conv1d_forward(self.value(x), self.value(w), self.value(b), dims);
        self.push("conv1d", vec![dims.c_out, out_len], out, Op::Conv1d { x, w, b, dims }, &[x, w, b])
    }

    /// 2-D analogue of [`Tape::conv1d`] for `x: C_in×H×W`, `w: C_out×C_in×Kh×Kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || self.value(b).len() != sw[0] {
            return dim_err("conv2d", format!("input {sx:?}, weight {sw:?}, bias {:?}", self.shape(b)));
        }
        let oh = kernels::conv_out_len(sx[1], sw[2], stride.0, padding.0);
        let ow = kernels::conv_out_len(sx[2], sw[3], stride.1, padding.1);
        let (Some(out_h), Some(out_w)) = (oh, ow) else {
            return dim_err("conv2d", format!("kernel {:?} exceeds padded input {sx:?}", &sw[2..]));
        };
        let dims = Conv2dDims { c_in: sx[0], h: sx[1], w: sx[2], c_out: sw[0], kh: sw[2], kw: sw[3], stride, padding, out_h, out_w };
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), dims);
        self.push("conv2d", vec![dims.c_out, out_h, out_w], out, Op::Conv2d { x, w, b, dims }, &[x, w, b])
    }

    /// Non-overlapping max pooling of `C×L` with window `k`.
    pub fn max_pool1d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || k == 0 || s[1] < k {
            return dim_err("max_pool1d", format!("window {k} over {s:?}"));
        }
        let (c, len) = (s[0], s[1]);
        let out_len = len / k;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c * out_len);
        let mut argmax = Vec::with_capacity(c * out_len);
        for ch in 0..c {
            for t in 0..out_len {
                let start = ch * len + t * k;
                let mut best = start;
                for i in start + 1..start + k {
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        self.push("max_pool1d", vec![c, out_len], out, Op::MaxPool1d { x, argmax }, &[x])
    }

    /// Mean over all trailing axes of `C×...`, giving `1×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return dim_err("global_avg_pool", format!("need C×..., got {s:?}"));
        }
        let c = s[0];
        let per = self.value(x).len() / c;
        let inv = T::one() / T::cst(per as f64);
        let out = self.value(x).chunks(per).map(|ch| ch.iter().fold(T::zero(), |a, &b| a + b) * inv).collect();
        self.push("global_avg_pool", vec![1, c], out, Op::GlobalAvgPool { x }, &[x])
    }

    /// One GRU layer over a `T×D` sequence, returning all hidden states `T×H`.
    pub fn gru_layer(&mut self, x: Var, h0: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return dim_err("gru", format!("input must be T×D, got {sx:?}"));
        }
        let hidden = self.value(h0).len();
        let (steps, input) = (sx[0], sx[1]);
        let ok = self.shape(w_ih) == [input, 3 * hidden]
            && self.shape(w_hh) == [hidden, 3 * hidden]
            && self.value(b_ih).len() == 3 * hidden
            && self.value(b_hh).len() == 3 * hidden;
        if !ok {
            return dim_err(
                "gru",
                format!("input {sx:?}, hidden {hidden}, w_ih {:?}, w_hh {:?}", self.shape(w_ih), self.shape(w_hh)),
            );
        }
        let dims = GruDims { steps, input, hidden };
        let (out, cache) = kernels::gru_forward(
            self.value(x),
            self.value(h0),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b_ih),
            self.value(b_hh),
            dims,
        );
        let op = Op::Gru { x, h0, w_ih, w_hh, b_ih, b_hh, dims, cache: Box::new(cache) };
        self.push("gru", vec![steps, hidden], out, op, &[x, h0, w_ih, w_hh, b_ih, b_hh])
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1. Gradients from
    /// multiple consumers of a node are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(TensorError::NotScalar(node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if node.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.nodes[..=loss.0]
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        let param_sizes = self.params.map(|s| s.iter().map(|p| p.tensor.numel()).collect()).unwrap_or_default();
        Ok(Gradients { grads, params, param_sizes })
    }

    /// Takes the gradient buffer of `v` out of `grads` (zero-filled on first
    /// touch) if `v` needs a gradient.
    fn take(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]))
    }

    fn with_grad(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut buf) = self.take(grads, v) {
            f(&mut buf);
            grads[v.0] = Some(buf);
        }
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        if !node.requires_grad {
            return;
        }
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                self.with_grad(grads, *a, |ga| kernels::matmul_a_bt_acc(g, self.value(*b), ga, m, k, n));
                self.with_grad(grads, *b, |gb| kernels::matmul_at_b_acc(self.value(*a), g, gb, m, k, n));
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    self.with_grad(grads, v, |gv| gv.iter_mut().zip(g).for_each(|(o, &d)| *o += d));
                }
            }
            Op::AddRow { x, bias } => {
                self.with_grad(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &d)| *o += d));
                self.with_grad(grads, *bias, |gb| {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, &d)| *o += d);
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.with_grad(grads, *a, |ga| {
                    for ((o, &d), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *o += d * w;
                    }
                });
                self.with_grad(grads, *b, |gb| {
                    for ((o, &d), &w) in gb.iter_mut().zip(g).zip(av) {
                        *o += d * w;
                    }
                });
            }
            Op::Scale { x, factor } => {
                self.with_grad(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &d)| *o += *factor * d));
            }
            Op::Sum { x } => {
                self.with_grad(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Tanh { x } => {
                self.with_grad(grads, *x, |gx| {
                    for ((o, &d), &yv) in gx.iter_mut().zip(g).zip(y.iter()) {
                        *o += d * (T::one() - yv * yv);
                    }
                });
            }
            Op::Sigmoid { x } => {
                self.with_grad(grads, *x, |gx| {
                    for ((o, &d), &yv) in gx.iter_mut().zip(g).zip(y.iter()) {
                        *o += d * yv * (T::one() - yv);
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                self.with_grad(grads, *x, |gx| {
                    for ((o, &d), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *o += d;
                        }
                    }
                });
            }
            Op::Elementwise { x, derivative } => {
                let xv = self.value(*x);
                self.with_grad(grads, *x, |gx| {
                    for ((o, &d), &v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += d * derivative(v);
                    }
                });
            }
            Op::Softmax { x } => {
                let c = *node.shape.last().expect("softmax output has a class axis");
                self.with_grad(grads, *x, |gx| {
                    for ((orow, grow), yrow) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot = grow.iter().zip(yrow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for ((o, &d), &p) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += p * (d - dot);
                        }
                    }
                });
            }
            Op::Join { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.with_grad(grads, p, |gp| {
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(o, &d)| *o += d)
                    });
                    off += n;
                }
            }
            Op::Row { x, index } => {
                let cols = g.len();
                self.with_grad(grads, *x, |gx| {
                    gx[index * cols..(index + 1) * cols].iter_mut().zip(g).for_each(|(o, &d)| *o += d)
                });
            }
            Op::Reshape { x } => {
                self.with_grad(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &d)| *o += d));
            }
            Op::CrossEntropy { probs, label } => {
                let p = self.value(*probs)[*label];
                if p > T::cst(CE_FLOOR) {
                    self.with_grad(grads, *probs, |gp| gp[*label] -= g[0] / p);
                }
            }
            Op::Conv1d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = self.take(grads, *x);
                let mut gw = self.take(grads, *w);
                let mut gb = self.take(grads, *b);
                kernels::conv1d_backward(xv, wv, g, *dims, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                for (v, buf) in [(*x, gx), (*w, gw), (*b, gb)] {
                    if buf.is_some() {
                        grads[v.0] = buf;
                    }
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = self.take(grads, *x);
                let mut gw = self.take(grads, *w);
                let mut gb = self.take(grads, *b);
                kernels::conv2d_backward(xv, wv, g, *dims, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                for (v, buf) in [(*x, gx), (*w, gw), (*b, gb)] {
                    if buf.is_some() {
                        grads[v.0] = buf;
                    }
                }
            }
            Op::MaxPool1d { x, argmax } => {
                self.with_grad(grads, *x, |gx| {
                    for (&src, &d) in argmax.iter().zip(g) {
                        gx[src] += d;
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                self.with_grad(grads, *x, |gx| {
                    let per = gx.len() / g.len();
                    let inv = T::one() / T::cst(per as f64);
                    for (ch, &d) in gx.chunks_mut(per).zip(g) {
                        ch.iter_mut().for_each(|o| *o += d * inv);
                    }
                });
            }
            Op::Gru { x, h0, w_ih, w_hh, b_ih, b_hh, dims, cache } => {
                let r = kernels::gru_backward(
                    self.value(*x),
                    self.value(*h0),
                    self.value(*w_ih),
                    self.value(*w_hh),
                    y,
                    cache,
                    g,
                    *dims,
                );
                for (v, d) in [(*x, &r.dx), (*h0, &r.dh0), (*w_ih, &r.dw_ih), (*w_hh, &r.dw_hh), (*b_ih, &r.db_ih), (*b_hh, &r.db_hh)] {
                    self.with_grad(grads, v, |gv| gv.iter_mut().zip(d).for_each(|(o, &dd)| *o += dd));
                }
            }
        }
    }
}

/// Result of [`Tape::backward`]: a gradient per reached node, plus the
/// mapping from parameter leaves back to their store slots.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
    param_sizes: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Sums gradients of every parameter leaf into store-indexed buffers.
    pub fn param_grads(&self) -> ParamGrads<T> {
        let mut out = ParamGrads(self.param_sizes.iter().map(|&n| vec![T::zero(); n]).collect());
        self.accumulate_into(&mut out, T::one());
        out
    }

    /// Adds `scale ·` each parameter gradient into `acc`, which must be
    /// shaped like the store the tape was bound to.
    pub fn accumulate_into(&self, acc: &mut ParamGrads<T>, scale: T) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (o, &d) in acc.0[id.index()].iter_mut().zip(g) {
                    *o += scale * d;
                }
            }
        }
    }
}
