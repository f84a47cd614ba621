//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! bound by reference (no copy) and their gradients are collected by
//! identity after [`Tape::backward`]. Operations that need a hand-written
//! backward (lattice recursions, joiners) plug in through [`CustomOp`].

use std::collections::HashMap;

use super::kernels::{self, AttnSegment};
use super::logspace::{log_sigmoid, log_softmax_into, sigmoid};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an operation defined outside this module.
pub trait CustomOp<S: Scalar> {
    /// Gradients with respect to each input, given the output gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Vec<Option<Tensor<S>>>;
}

enum Val<'p, S> {
    Own(Tensor<S>),
    Ref(&'p Tensor<S>),
}

enum Op<S: Scalar> {
    Leaf,
    MatMul { a: Var, b: Var, bt: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, bias: Var },
    Scale { a: Var, c: S },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LogSigmoid(Var),
    Exp(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: Vec<AttnSegment>,
        probs: Vec<S>,
    },
    Gather { table: Var, ids: Vec<usize> },
    Pick { a: Var, idx: Vec<usize> },
    Sum(Var),
    SliceRows { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<S>> },
}

struct Node<'p, S: Scalar> {
    value: Val<'p, S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<'p, S: Scalar> {
    nodes: Vec<Node<'p, S>>,
    grad_enabled: bool,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires gradients.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Val::Own(t) => t,
            Val::Ref(t) => t,
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<S> {
        match std::mem::replace(&mut self.nodes[v.0].value, Val::Own(Tensor::zeros(&[0]))) {
            Val::Own(t) => t,
            Val::Ref(t) => t.clone(),
        }
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Val::Own(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant or input leaf.
    pub fn input(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Own(value),
            op: Op::Leaf,
            needs_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.input(value, false)
    }

    /// Binds a parameter by reference.
    pub fn param(&mut self, value: &'p Tensor<S>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Ref(value),
            op: Op::Leaf,
            needs_grad: trainable && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Value copy with the gradient path cut.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b), false)?;
        Ok(self.push(out, Op::MatMul { a, b, bt: false }, &[a, b]))
    }

    /// `a · bᵀ`, with `b` stored as `[n × k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b), true)?;
        Ok(self.push(out, Op::MatMul { a, b, bt: true }, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.len() != cols {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow { a, bias }, &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale { a, c }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(S::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.shape());
        let cols = ta.cols();
        for r in 0..ta.rows() {
            log_softmax_into(ta.row(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if self.value(g).len() != cols || self.value(b).len() != cols {
            return Err(Error::Shape(format!("layer_norm over {cols} columns")));
        }
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(tx.data(), cols, self.value(g).data(), self.value(b).data());
        let out = Tensor::new(tx.shape().to_vec(), y)?;
        Ok(self.push(out, Op::LayerNorm { x, g, b, xhat, rstd }, &[x, g, b]))
    }

    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: Vec<AttnSegment>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() || d % heads != 0 {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?} heads {heads}",
                tq.shape(),
                tk.shape(),
                tv.shape()
            )));
        }
        for s in &segs {
            if s.q_start + s.q_len > tq.rows() || s.k_start + s.k_len > tk.rows() {
                return Err(Error::Shape(format!("attention segment {s:?} out of range")));
            }
        }
        let (out, probs) =
            kernels::attention_forward(tq.data(), tk.data(), tv.data(), d, heads, &segs);
        let out = Tensor::matrix(tq.rows(), d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tt.rows()) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: tt.rows(),
            });
        }
        let out = tt.gather_rows(ids);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Picks flat elements into a vector.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let ta = self.value(a);
        let out = Tensor::vector(idx.iter().map(|&i| ta.data()[i]).collect());
        self.push(
            out,
            Op::Pick {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, S::one() / S::of(n as f64))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(Error::Shape(format!(
                "rows {start}..{} of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let out = ta.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows { a, start }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&tensors)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Stacks scalars (or vectors) end to end into one vector.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let n: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut data = Vec::with_capacity(n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(n, 1, data)?;
        let v = self.push(out, Op::ConcatRows(parts.to_vec()), parts);
        Ok(v)
    }

    /// Same values under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::ConcatRows(vec![a]), &[a]))
    }

    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<S>,
        op: Box<dyn CustomOp<S>>,
    ) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut by_param: HashMap<*const Tensor<S>, Tensor<S>> = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Val::Ref(p), Some(g)) = (&node.value, &grads[idx]) {
                let key = *p as *const Tensor<S>;
                match by_param.get_mut(&key) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        by_param.insert(key, g.clone());
                    }
                }
            }
        }
        Ok(Gradients { grads, by_param })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], target: Var, g: Tensor<S>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, bt } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    // dA = G·Bᵀ (or G·B when b is stored transposed)
                    let da = matmul(g, tb, !*bt).expect("matmul grad shape");
                    self.accumulate(grads, *a, da);
                }
                if self.needs_grad(*b) {
                    let db = if *bt {
                        matmul_tn(g, ta)
                    } else {
                        matmul_tn(ta, g)
                    };
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, elementwise(g, tb, |x, y| x * y));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, elementwise(g, ta, |x, y| x * y));
                }
            }
            Op::AddRow { a, bias } => {
                self.accumulate(grads, *a, g.clone());
                if self.needs_grad(*bias) {
                    let mut db = Tensor::zeros(self.value(*bias).shape());
                    for r in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Scale { a, c } => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, elementwise(g, out, |x, y| x * (S::one() - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, elementwise(g, out, |x, y| x * y * (S::one() - y)));
            }
            Op::Relu(a) => {
                self.accumulate(
                    grads,
                    *a,
                    elementwise(g, out, |x, y| if y > S::zero() { x } else { S::zero() }),
                );
            }
            Op::LogSigmoid(a) => {
                // d/dz log σ(z) = 1 − σ(z) = σ(−z)
                let ta = self.value(*a);
                self.accumulate(grads, *a, elementwise(g, ta, |x, z| x * sigmoid(-z)));
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, elementwise(g, out, |x, y| x * y));
            }
            Op::LogSoftmax(a) => {
                let cols = out.cols();
                let mut da = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let gr = g.row(r);
                    let s: S = gr.iter().copied().sum();
                    let orow = out.row(r);
                    let drow = &mut da.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        drow[c] = gr[c] - orow[c].exp() * s;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, g: gain, b, xhat, rstd } => {
                let cols = out.cols();
                let (dx, dg, db) = kernels::layer_norm_backward(
                    g.data(),
                    xhat,
                    rstd,
                    self.value(*gain).data(),
                    cols,
                );
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), dx).unwrap());
                let gshape = self.value(*gain).shape().to_vec();
                self.accumulate(grads, *gain, Tensor::new(gshape.clone(), dg).unwrap());
                self.accumulate(grads, *b, Tensor::new(gshape, db).unwrap());
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs,
                probs,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = tq.cols();
                let (dq, dk, dv) = kernels::attention_backward(
                    g.data(),
                    tq.data(),
                    tk.data(),
                    tv.data(),
                    probs,
                    d,
                    *heads,
                    segs,
                );
                self.accumulate(grads, *q, Tensor::new(tq.shape().to_vec(), dq).unwrap());
                self.accumulate(grads, *k, Tensor::new(tk.shape().to_vec(), dk).unwrap());
                self.accumulate(grads, *v, Tensor::new(tv.shape().to_vec(), dv).unwrap());
            }
            Op::Gather { table, ids } => {
                if self.needs_grad(*table) {
                    let mut dt = Tensor::zeros(self.value(*table).shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::Pick { a, idx } => {
                let mut da = Tensor::zeros(self.value(*a).shape());
                for (k, &i) in idx.iter().enumerate() {
                    da.data_mut()[i] += g.data()[k];
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::SliceRows { a, start } => {
                if self.needs_grad(*a) {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.shape());
                    let c = ta.cols();
                    da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    self.accumulate(grads, *a, da);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let n = tp.len();
                    if self.needs_grad(p) {
                        let piece = Tensor::new(tp.shape().to_vec(), g.data()[off..off + n].to_vec())
                            .unwrap();
                        self.accumulate(grads, p, piece);
                    }
                    off += n;
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<S>> = inputs.iter().map(|&i| self.value(i)).collect();
                let gs = op.backward(&ins, out, g);
                for (&i, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, i, gi);
                    }
                }
            }
        }
    }
}

/// `aᵀ · b` for `a [k×m]`, `b [k×n]`.
fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = Tensor::zeros(&[m, n]);
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a.data(),
        1,
        m as isize,
        b.data(),
        n as isize,
        1,
        S::zero(),
        out.data_mut(),
        n as isize,
        1,
    );
    out
}

fn elementwise<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Gradients of one backward sweep.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
    by_param: HashMap<*const Tensor<S>, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn of(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    /// Summed gradient of a parameter bound with [`Tape::param`].
    pub fn of_param(&self, p: &Tensor<S>) -> Option<&Tensor<S>> {
        self.by_param.get(&(p as *const Tensor<S>))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Tensor::<f64>::vector(vec![3.0]);
        let mut tape = Tape::new();
        let a = tape.param(&x, true);
        let y = tape.mul(a, a).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.of_param(&x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let w = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let x0 = Tensor::<f64>::from_f64(&[1, 2], &[1.0, -1.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&w, false);
        let x = tape.input(x0, true);
        let y = tape.matmul(x, wv).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.of_param(&w).is_none());
        assert_eq!(g.of(x).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn inference_tape_records_no_grad() {
        let w = Tensor::<f32>::vector(vec![1.0]);
        let mut tape = Tape::inference();
        let a = tape.param(&w, true);
        assert!(!tape.needs_grad(a));
    }
}
