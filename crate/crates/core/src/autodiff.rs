//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed in a forward pass. Parameters
//! live in a [`ParamStore`] that the graph borrows, so building a graph never
//! copies weights. [`Graph::backward`] walks the tape once in reverse and
//! returns the parameter gradients as a [`Grads`] collection.
//!
//! Every op checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of propagating bad values.

use std::collections::HashMap;

use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMulBias { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, dilation: usize },
    Relu(Var),
    HadamardPow { x: Var, p: u32 },
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Bmm(Var, Var),
    Reshape(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    /// `None` for parameters, whose value is read from the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient for `id`, or `None` when the parameter did not influence the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, with unreachable parameters reported as zeros.
    pub fn dense(&self, id: ParamId) -> Tensor<T> {
        self.grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

fn finite<T: Scalar>(t: Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], consumed: false }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients never flow into it.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        let value = finite(value, "input")?;
        Ok(self.push(value, Op::Input, false))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `x · w + b` with `x: [B, I]`, `w: [I, O]`, `b: [O]`.
    pub fn matmul_bias(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(format!(
                "matmul_bias: x {xs:?}, w {ws:?}, b {bs:?} are incompatible"
            )));
        }
        let (batch, inner, outer) = (xs[0], xs[1], ws[1]);
        let mut out = Tensor::zeros(&[batch, outer]);
        gemm(false, false, batch, outer, inner, self.value(x).data(), self.value(w).data(), T::zero(), out.data_mut());
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(outer) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o = *o + bv;
            }
        }
        let out = finite(out, "matmul_bias")?;
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        Ok(self.push(out, Op::MatMulBias { x, w, b }, rg))
    }

    /// 3×3 convolution, `x: [B, Cin, H, W]`, `kernel: [Cout, Cin, 3, 3]`,
    /// zero padding of width `dilation`.
    pub fn conv2d_dilated(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let out = finite(conv::forward(self.value(x), self.value(kernel), dilation)?, "conv2d_dilated")?;
        let rg = self.requires_grad(x) || self.requires_grad(kernel);
        Ok(self.push(out, Op::Conv2d { x, k: kernel, dilation }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// Elementwise `x^p` for `p >= 1`.
    pub fn hadamard_power(&mut self, x: Var, p: u32) -> Result<Var> {
        if p == 0 {
            return Err(Error::Config("hadamard_power requires p >= 1".into()));
        }
        let out = finite(self.value(x).map(|v| v.powi(p as i32)), "hadamard_power")?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::HadamardPow { x, p }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o * v;
        }
        let out = finite(out, "mul")?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.axpy(T::one(), self.value(b));
        let out = finite(out, "add")?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = finite(self.value(x).map(|v| v * c), "scale")?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    /// Batched matrix product `[B, M, N] × [B, N, P] -> [B, M, P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("bmm: shapes {sa:?} and {sb:?} are incompatible")));
        }
        let (batch, m, n, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(&[batch, m, p]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                false,
                false,
                m,
                p,
                n,
                &da[i * m * n..(i + 1) * m * n],
                &db[i * n * p..(i + 1) * n * p],
                T::zero(),
                &mut out.data_mut()[i * m * p..(i + 1) * m * p],
            );
        }
        let out = finite(out, "bmm")?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Bmm(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, with one-hot
    /// targets `[B, V]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let ls = self.value(logits).shape();
        if ls.len() != 2 || targets.shape() != ls {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: logits {ls:?} vs targets {:?}",
                targets.shape()
            )));
        }
        let classes = ls[1];
        let mut labels = Vec::with_capacity(ls[0]);
        for (row, t) in targets.data().chunks(classes).enumerate() {
            let ones = t.iter().filter(|&&v| v == T::one()).count();
            let zeros = t.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != classes - 1 {
                return Err(Error::Input(format!("target row {row} is not a one-hot vector")));
            }
            labels.push(t.iter().position(|&v| v == T::one()).unwrap());
        }
        self.softmax_cross_entropy_labels(logits, &labels)
    }

    /// As [`Graph::softmax_cross_entropy`], with targets given as class indices.
    pub fn softmax_cross_entropy_labels(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.value(logits).shape();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: logits {ls:?} with {} labels",
                labels.len()
            )));
        }
        let classes = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        let batch = labels.len();
        let mut probs = vec![T::zero(); batch * classes];
        let mut total = T::zero();
        for (i, row) in self.value(logits).data().chunks(classes).enumerate() {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for (p, &v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                sum = sum + *p;
            }
            for p in &mut probs[i * classes..(i + 1) * classes] {
                *p = *p / sum;
            }
            total = total + (sum.ln() + max - row[labels[i]]);
        }
        let loss = finite(Tensor::scalar(total / T::of(batch as f64)), "softmax_cross_entropy")?;
        let rg = self.requires_grad(logits);
        Ok(self.push(loss, Op::SoftmaxCrossEntropy { logits, targets: labels.to_vec(), probs }, rg))
    }

    /// Reverse pass seeded with `d loss / d loss = 1`.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        self.backward_seeded(loss, T::one())
    }

    /// Reverse pass with an explicit upstream gradient on the scalar `loss`.
    pub fn backward_seeded(&mut self, loss: Var, seed: T) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::Usage("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut node_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            let mut send = |v: Var, t: Tensor<T>| accumulate(&mut node_grads[v.0], t);
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut param_grads[id.0], g),
                &Op::MatMulBias { x, w, b } => {
                    let (xv, wv) = (self.value(x), self.value(w));
                    let (batch, inner, outer) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                    if self.requires_grad(x) {
                        let mut dx = Tensor::zeros(xv.shape());
                        gemm(false, true, batch, inner, outer, g.data(), wv.data(), T::zero(), dx.data_mut());
                        send(x, dx);
                    }
                    if self.requires_grad(w) {
                        let mut dw = Tensor::zeros(wv.shape());
                        gemm(true, false, inner, outer, batch, xv.data(), g.data(), T::zero(), dw.data_mut());
                        send(w, dw);
                    }
                    if self.requires_grad(b) {
                        let mut db = Tensor::zeros(&[outer]);
                        for row in g.data().chunks(outer) {
                            for (d, &r) in db.data_mut().iter_mut().zip(row) {
                                *d = *d + r;
                            }
                        }
                        send(b, db);
                    }
                }
                &Op::Conv2d { x, k, dilation } => {
                    let (dx, dk) = conv::backward(
                        self.value(x),
                        self.value(k),
                        dilation,
                        &g,
                        self.requires_grad(x),
                        self.requires_grad(k),
                    )?;
                    if let Some(dx) = dx {
                        send(x, dx);
                    }
                    if let Some(dk) = dk {
                        send(k, dk);
                    }
                }
                &Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    send(x, dx);
                }
                &Op::HadamardPow { x, p } => {
                    let mut dx = g;
                    let pf = T::of(p as f64);
                    for (d, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                        *d = *d * pf * v.powi(p as i32 - 1);
                    }
                    send(x, dx);
                }
                &Op::Mul(a, b) => {
                    if self.requires_grad(a) {
                        let mut da = g.clone();
                        for (d, &v) in da.data_mut().iter_mut().zip(self.value(b).data()) {
                            *d = *d * v;
                        }
                        send(a, da);
                    }
                    if self.requires_grad(b) {
                        let mut db = g;
                        for (d, &v) in db.data_mut().iter_mut().zip(self.value(a).data()) {
                            *d = *d * v;
                        }
                        send(b, db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.requires_grad(a) {
                        send(a, g.clone());
                    }
                    if self.requires_grad(b) {
                        send(b, g);
                    }
                }
                &Op::Scale(x, c) => send(x, g.map(|v| v * c)),
                &Op::Bmm(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let (batch, m, n, p) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                    if self.requires_grad(a) {
                        let mut da = Tensor::zeros(av.shape());
                        for s in 0..batch {
                            gemm(
                                false,
                                true,
                                m,
                                n,
                                p,
                                &g.data()[s * m * p..(s + 1) * m * p],
                                &bv.data()[s * n * p..(s + 1) * n * p],
                                T::zero(),
                                &mut da.data_mut()[s * m * n..(s + 1) * m * n],
                            );
                        }
                        send(a, da);
                    }
                    if self.requires_grad(b) {
                        let mut db = Tensor::zeros(bv.shape());
                        for s in 0..batch {
                            gemm(
                                true,
                                false,
                                n,
                                p,
                                m,
                                &av.data()[s * m * n..(s + 1) * m * n],
                                &g.data()[s * m * p..(s + 1) * m * p],
                                T::zero(),
                                &mut db.data_mut()[s * n * p..(s + 1) * n * p],
                            );
                        }
                        send(b, db);
                    }
                }
                &Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    send(x, g.reshape(&shape)?);
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let logits = *logits;
                    let shape = self.value(logits).shape().to_vec();
                    let (batch, classes) = (shape[0], shape[1]);
                    let upstream = g.item() / T::of(batch as f64);
                    let mut dl = Tensor::new(shape, probs.clone())?;
                    for (row, &t) in dl.data_mut().chunks_mut(classes).zip(targets.iter()) {
                        row[t] = row[t] - T::one();
                        for v in row.iter_mut() {
                            *v = *v * upstream;
                        }
                    }
                    send(logits, dl);
                }
            }
        }

        for g in param_grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        let shapes = self.store.params.iter().map(|p| p.value.shape().to_vec()).collect();
        Ok(Grads { grads: param_grads, shapes })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(acc) => acc.axpy(T::one(), &t),
        None => *slot = Some(t),
    }
}
