//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation executed during a forward pass. Nodes
//! are appended in execution order, so the tape is always topologically
//! sorted and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters are borrowed into the tape rather than copied; the tape must be
//! dropped before the owning parameter store is updated.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Affine { x: Var, w: Var, b: Var, rows: usize, inp: usize, out: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift { a: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    LogSigmoid(Var),
    Log { a: Var, floor: f64 },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Pick { a: Var, index: usize },
    Reshape(Var),
    Concat(Vec<Var>),
    Embedding { table: Var, indices: Vec<usize>, dim: usize },
    Conv1d { seq: Var, w: Var, b: Var, window: usize, in_dim: usize, filters: usize },
    MaxOverTime { a: Var, argmax: Vec<usize>, features: usize },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded entries.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf borrowing the parameter's storage.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.leaf(t.shape().to_vec(), Cow::Borrowed(t.data()), true)
    }

    /// Non-trainable leaf borrowing existing storage.
    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.leaf(t.shape().to_vec(), Cow::Borrowed(t.data()), false)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.leaf(shape, Cow::Owned(t.into_data()), false)
    }

    /// Trainable leaf owning its value (used by gradient checks on inputs).
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.leaf(shape, Cow::Owned(t.into_data()), true)
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault { op: name });
        }
        let requires_grad = self.inputs_require_grad(&op);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_require_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                rg(a) || rg(b)
            }
            Op::Affine { x, w, b, .. } => rg(x) || rg(w) || rg(b),
            Op::Conv1d { seq, w, b, .. } => rg(seq) || rg(w) || rg(b),
            Op::ScaleShift { a, .. }
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::LogSigmoid(a)
            | Op::Log { a, .. }
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Pick { a, .. }
            | Op::Reshape(a)
            | Op::MaxOverTime { a, .. } => rg(a),
            Op::Embedding { table, .. } => rg(table),
            Op::Concat(vs) => vs.iter().any(rg),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape values are validated on push")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Interprets a node as a matrix: `[n]` is a single row.
    fn as_matrix(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => (s[0], s[1..].iter().product()),
        }
    }

    // ---- forward operations ------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`; a 1-D left operand is treated as a row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.as_matrix(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let n = bs[1];
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in av[i * k..(i + 1) * k].iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                for (o, &bpj) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        self.push("matmul", shape, out, Op::MatMul { a, b, m, k, n })
    }

    /// `x W + b` for `x: [rows, in]` (or `[in]`), `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inp) = self.as_matrix(x);
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[0] != inp || self.numel(b) != ws[1] {
            return Err(Error::shape(
                "affine",
                format!("x {:?}, W {:?}, b {:?}", self.shape(x), ws, self.shape(b)),
            ));
        }
        let out_dim = ws[1];
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(rows * out_dim);
        for r in 0..rows {
            out.extend_from_slice(bv);
            let row = &mut out[r * out_dim..];
            for (p, &xp) in xv[r * inp..(r + 1) * inp].iter().enumerate() {
                if xp == 0.0 {
                    continue;
                }
                for (o, &wpj) in row.iter_mut().zip(&wv[p * out_dim..(p + 1) * out_dim]) {
                    *o += xp * wpj;
                }
            }
        }
        let shape = if self.shape(x).len() == 1 { vec![out_dim] } else { vec![rows, out_dim] };
        self.push(
            "affine",
            shape,
            out,
            Op::Affine { x, w, b, rows, inp, out: out_dim },
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, out, op)
    }

    /// `scale * a + shift`, elementwise.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map("scale_shift", a, |x| scale * x + shift, Op::ScaleShift { a, scale })
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.scale_shift(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `log(1 + e^x)`, stable for large |x|.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, softplus, Op::Softplus(a))
    }

    /// `log(sigmoid(x))` computed as `-softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("log_sigmoid", a, |x| -softplus(-x), Op::LogSigmoid(a))
    }

    /// Natural log. Inputs at or below zero are an error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= 0.0) {
            return Err(Error::NumericFault { op: "log" });
        }
        self.map("log", a, f64::ln, Op::Log { a, floor: 0.0 })
    }

    /// `log(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 {
            return Err(Error::contract("log floor must be positive"));
        }
        self.map("log_floor", a, |x| x.max(floor).ln(), Op::Log { a, floor })
    }

    /// Softmax over all elements of a vector (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("softmax", format!("expected a vector, got {:?}", self.shape(a))));
        }
        let v = self.value(a);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|e| e / z).collect();
        let shape = self.shape(a).to_vec();
        self.push("softmax", shape, out, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(a))
    }

    /// Inner product of two equally sized nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.numel(a) != self.numel(b) {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push("dot", vec![1], vec![s], Op::Dot(a, b))
    }

    /// Single element `a[index]` (flat index) as a scalar node.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let v = self.value(a);
        let x = *v.get(index).ok_or_else(|| {
            Error::shape("pick", format!("index {index} out of range for {} elements", v.len()))
        })?;
        self.push("pick", vec![1], vec![x], Op::Pick { a, index })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.numel(a) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let out = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(a))
    }

    /// Concatenation along the first axis. Trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{:?} vs trailing {:?}", s, tail)));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push("concat", shape, out, Op::Concat(parts.to_vec()))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let inner = self.shape(*first).to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.numel(*first));
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", self.shape(p), inner)));
            }
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![parts.len()];
        if !(inner.len() == 1 && inner[0] == 1) {
            shape.extend(inner);
        }
        // rows of a stack are the parts, so backward is the same slicing as concat
        self.push("stack", shape, out, Op::Concat(parts.to_vec()))
    }

    /// Rows of `table: [V, d]` selected by `indices`, giving `[len, d]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::shape("embedding_lookup", format!("table shape {ts:?}")));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if indices.is_empty() {
            return Err(Error::contract("embedding lookup with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("index {bad} out of range for vocabulary of {vocab}"),
            ));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        self.push(
            "embedding_lookup",
            vec![indices.len(), dim],
            out,
            Op::Embedding { table, indices: indices.to_vec(), dim },
        )
    }

    /// Valid 1-D convolution over a sequence `[len, d]` with filters
    /// `[window * d, F]` and bias `[F]`, giving `[len - window + 1, F]`.
    ///
    /// Row `t` of the output is the flattened window `seq[t..t + window]`
    /// multiplied by the filter matrix.
    pub fn conv1d_seq(&mut self, seq: Var, w: Var, b: Var, window: usize) -> Result<Var> {
        let (len, in_dim) = self.as_matrix(seq);
        let ws = self.shape(w).to_vec();
        if window == 0 {
            return Err(Error::contract("convolution window must be at least 1"));
        }
        if window > len {
            return Err(Error::shape(
                "conv1d_seq",
                format!("window {window} longer than sequence of {len}"),
            ));
        }
        if ws.len() != 2 || ws[0] != window * in_dim || self.numel(b) != ws[1] {
            return Err(Error::shape(
                "conv1d_seq",
                format!(
                    "seq {:?}, filters {:?}, bias {:?}, window {window}",
                    self.shape(seq),
                    ws,
                    self.shape(b)
                ),
            ));
        }
        let filters = ws[1];
        let steps = len - window + 1;
        let span = window * in_dim;
        let sv = self.value(seq);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(steps * filters);
        for t in 0..steps {
            out.extend_from_slice(bv);
            let row = &mut out[t * filters..];
            for (p, &x) in sv[t * in_dim..t * in_dim + span].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (o, &wpj) in row.iter_mut().zip(&wv[p * filters..(p + 1) * filters]) {
                    *o += x * wpj;
                }
            }
        }
        self.push(
            "conv1d_seq",
            vec![steps, filters],
            out,
            Op::Conv1d { seq, w, b, window, in_dim, filters },
        )
    }

    /// Column-wise maximum of `[steps, F]`, giving `[F]`. Ties resolve to the
    /// first maximal step, which alone receives gradient.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let (steps, features) = self.as_matrix(a);
        let v = self.value(a);
        let mut argmax = vec![0usize; features];
        let mut out = v[..features].to_vec();
        for t in 1..steps {
            for f in 0..features {
                let x = v[t * features + f];
                if x > out[f] {
                    out[f] = x;
                    argmax[f] = t;
                }
            }
        }
        self.push(
            "max_over_time",
            vec![features],
            out,
            Op::MaxOverTime { a, argmax, features },
        )
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if ln.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            // keep intermediate gradients around only for leaves
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let val = |v: Var| -> &[f64] { &nodes[v.0].value };
        let out = &node.value;

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &gij) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gij;
                            }
                        }
                    }
                });
            }
            &Op::Affine { x, w, b, rows, inp, out: od } => {
                let (xv, wv) = (val(x), val(w));
                acc(x, &mut |gx| {
                    for r in 0..rows {
                        let grow = &g[r * od..(r + 1) * od];
                        for p in 0..inp {
                            gx[r * inp + p] +=
                                grow.iter().zip(&wv[p * od..(p + 1) * od]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(w, &mut |gw| {
                    for r in 0..rows {
                        let grow = &g[r * od..(r + 1) * od];
                        for p in 0..inp {
                            let xp = xv[r * inp + p];
                            if xp == 0.0 {
                                continue;
                            }
                            for (o, &gj) in gw[p * od..(p + 1) * od].iter_mut().zip(grow) {
                                *o += xp * gj;
                            }
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for r in 0..rows {
                        for (o, &gj) in gb.iter_mut().zip(&g[r * od..(r + 1) * od]) {
                            *o += gj;
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                });
            }
            &Op::ScaleShift { a, scale } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += scale * x));
            }
            &Op::Sigmoid(a) => {
                acc(a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        *o += x * y * (1.0 - y);
                    }
                });
            }
            &Op::Tanh(a) => {
                acc(a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        *o += x * (1.0 - y * y);
                    }
                });
            }
            &Op::Relu(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, &x), &z) in ga.iter_mut().zip(g).zip(av) {
                        if z > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            &Op::Softplus(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, &x), &z) in ga.iter_mut().zip(g).zip(av) {
                        *o += x * sigmoid(z);
                    }
                });
            }
            &Op::LogSigmoid(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, &x), &z) in ga.iter_mut().zip(g).zip(av) {
                        *o += x * sigmoid(-z);
                    }
                });
            }
            &Op::Log { a, floor } => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, &x), &z) in ga.iter_mut().zip(g).zip(av) {
                        if z > floor {
                            *o += x / z;
                        }
                    }
                });
            }
            &Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(out.iter()).map(|(x, y)| x * y).sum();
                acc(a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        *o += y * (x - gy);
                    }
                });
            }
            &Op::Sum(a) => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            &Op::Mean(a) => {
                let n = val(a).len() as f64;
                acc(a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            &Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| ga.iter_mut().zip(bv).for_each(|(o, &y)| *o += g[0] * y));
                acc(b, &mut |gb| gb.iter_mut().zip(av).for_each(|(o, &x)| *o += g[0] * x));
            }
            &Op::Pick { a, index } => {
                acc(a, &mut |ga| ga[index] += g[0]);
            }
            &Op::Reshape(a) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    let slice = &g[offset..offset + n];
                    acc(p, &mut |gp| gp.iter_mut().zip(slice).for_each(|(o, &x)| *o += x));
                    offset += n;
                }
            }
            Op::Embedding { table, indices, dim } => {
                let dim = *dim;
                acc(*table, &mut |gt| {
                    for (t, &i) in indices.iter().enumerate() {
                        for (o, &x) in gt[i * dim..(i + 1) * dim].iter_mut().zip(&g[t * dim..(t + 1) * dim]) {
                            *o += x;
                        }
                    }
                });
            }
            &Op::Conv1d { seq, w, b, window, in_dim, filters } => {
                let (sv, wv) = (val(seq), val(w));
                let steps = g.len() / filters;
                let span = window * in_dim;
                acc(seq, &mut |gs| {
                    for t in 0..steps {
                        let grow = &g[t * filters..(t + 1) * filters];
                        for p in 0..span {
                            gs[t * in_dim + p] += grow
                                .iter()
                                .zip(&wv[p * filters..(p + 1) * filters])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                });
                acc(w, &mut |gw| {
                    for t in 0..steps {
                        let grow = &g[t * filters..(t + 1) * filters];
                        for (p, &x) in sv[t * in_dim..t * in_dim + span].iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &gj) in gw[p * filters..(p + 1) * filters].iter_mut().zip(grow) {
                                *o += x * gj;
                            }
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for t in 0..steps {
                        for (o, &gj) in gb.iter_mut().zip(&g[t * filters..(t + 1) * filters]) {
                            *o += gj;
                        }
                    }
                });
            }
            Op::MaxOverTime { a, argmax, features } => {
                let features = *features;
                acc(*a, &mut |ga| {
                    for (f, &t) in argmax.iter().enumerate() {
                        ga[t * features + f] += g[f];
                    }
                });
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` was not reached.
    pub fn wrt(&self, tape: &Tape<'_>, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(tape.shape(v).to_vec(), g.clone())
                .unwrap_or_else(|_| Tensor::zeros(tape.shape(v))),
            None => Tensor::zeros(tape.shape(v)),
        }
    }

    /// Raw gradient slice, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(Option::as_deref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.scalar(y), 0.5);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y)[0], 1.0);
    }

    #[test]
    fn matmul_matches_nested_loop_reference() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        // reference: c[i][j] = sum_p a[i][p] * b[p][j]
        let mut reference = [0.0; 2];
        for i in 0..2 {
            for p in 0..2 {
                reference[i] += a.data()[i * 2 + p] * b.data()[p];
            }
        }
        assert_eq!(reference, [17.0, 39.0]);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let c = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.shape(c), &[2, 1]);
        assert_eq!(tape.value(c), &reference);
    }

    #[test]
    fn matmul_rejects_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::scalar(0.0));
        let y = tape.sigmoid(w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(&tape, w).data(), &[0.25]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]));
        let m = tape.mean(x).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.wrt(&tape, x).data(), &[0.25; 4]);
    }

    #[test]
    fn unreachable_leaves_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.variable(Tensor::vector(vec![3.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, unused).data(), &[0.0]);
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn max_over_time_routes_ties_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3, 2], &[1.0, 5.0, 1.0, 2.0, 0.0, 5.0]));
        let m = tape.max_over_time(x).unwrap();
        assert_eq!(tape.value(m), &[1.0, 5.0]);
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, x).data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_results_are_faults() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1e308));
        let err = tape.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NumericFault { op: "scale_shift" }));
        let z = tape.constant(Tensor::scalar(0.0));
        assert!(matches!(tape.log(z), Err(Error::NumericFault { op: "log" })));
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-800.0, 800.0]));
        let y = tape.log_sigmoid(x).unwrap();
        assert_eq!(tape.value(y), &[-800.0, 0.0]);
    }

    #[test]
    fn constants_are_not_recorded_for_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0]));
        let b = tape.tanh(a).unwrap();
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn conv_window_longer_than_sequence_is_an_error() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[9, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv1d_seq(s, w, b, 3), Err(Error::Shape { .. })));
    }
}
