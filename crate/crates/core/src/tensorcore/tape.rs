//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! Every operation is evaluated eagerly and appended to the tape. The
//! backward pass is itself expressed with tape operations, so a gradient
//! returned by [`Tape::grad`] is an ordinary [`Var`] that can be fed into
//! further computation and differentiated again (reverse-over-reverse).

use super::ops::{eval, Op};
use super::tensor::Tensor;
use super::TensorError;
use crate::scalar::Scalar;
use std::cell::RefCell;
use std::rc::Rc;

struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    value: Rc<Tensor<T>>,
}

/// Ordered list of recorded nodes. Inputs of a node always precede it.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Whether it is differentiated is decided by the `wrt`
    /// list passed to [`Tape::grad`], so parameters, marked inputs and
    /// constants are all leaves.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, Vec::new(), Rc::new(value))
    }

    pub fn leaf_shared(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, op: Op<T>, inputs: Vec<usize>, value: Rc<Tensor<T>>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Applies `op` to `inputs`, recording the result.
    pub fn apply<'t>(&'t self, op: Op<T>, inputs: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let values: Vec<Rc<Tensor<T>>> = {
            let nodes = self.nodes.borrow();
            inputs
                .iter()
                .map(|v| {
                    debug_assert!(std::ptr::eq(v.tape, self), "var from a different tape");
                    Rc::clone(&nodes[v.id].value)
                })
                .collect()
        };
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = eval(&op, &refs)?;
        Ok(self.push(op, inputs.iter().map(|v| v.id).collect(), Rc::new(out)))
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, TensorError> {
        self.apply(Op::Concat { axis }, parts)
    }

    /// Re-evaluates every recorded operation from its inputs and reports
    /// whether all stored values are reproduced bit-exactly.
    pub fn replay(&self) -> Result<bool, TensorError> {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            if node.op == Op::Leaf {
                continue;
            }
            let refs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let again = eval(&node.op, &refs)?;
            let same = again.shape() == node.value.shape()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Gradients of the one-element `output` with respect to each of `wrt`.
    ///
    /// The returned vars live on this tape; they can be combined with other
    /// ops and differentiated again. Leaves that `output` does not depend on
    /// receive zero gradients.
    pub fn grad<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>, TensorError> {
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar { shape: out_shape });
        }
        let n = output.id + 1;
        let mut relevant = vec![false; n];
        for w in wrt {
            if w.id < n {
                relevant[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !relevant[id] && nodes[id].inputs.iter().any(|&i| relevant[i]) {
                    relevant[id] = true;
                }
            }
        }

        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; n];
        if relevant[output.id] {
            grads[output.id] = Some(self.leaf(Tensor::ones(out_shape)));
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].inputs.clone())
            };
            if op == Op::Leaf {
                continue;
            }
            let need: Vec<bool> = inputs.iter().map(|&i| relevant[i]).collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let contribs = self.vjp(&op, &inputs, id, g, &need)?;
            for ((&input, contrib), needed) in inputs.iter().zip(contribs).zip(need) {
                if !needed {
                    continue;
                }
                if let Some(c) = contrib {
                    grads[input] = Some(match grads[input] {
                        Some(prev) => prev.add(c)?,
                        None => c,
                    });
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(w.shape())),
            })
            .collect())
    }

    /// First-order convenience: gradient values only.
    pub fn grad_values(&self, output: Var<'_, T>, wrt: &[Var<'_, T>]) -> Result<Vec<Tensor<T>>, TensorError> {
        Ok(self
            .grad(output, wrt)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    fn mask<'t>(&'t self, of: usize, f: impl Fn(T) -> bool) -> Var<'t, T> {
        let v = self.value_of(of);
        self.leaf(v.map(|x| if f(x) { T::one() } else { T::zero() }))
    }

    /// Vector-Jacobian products of one node, written as tape ops.
    fn vjp<'t>(
        &'t self,
        op: &Op<T>,
        inputs: &[usize],
        out: usize,
        g: Var<'t, T>,
        need: &[bool],
    ) -> Result<Vec<Option<Var<'t, T>>>, TensorError> {
        let x = |k: usize| self.var(inputs[k]);
        let y = self.var(out);
        let one = |v: Var<'t, T>| Ok::<_, TensorError>(vec![Some(v)]);
        match op {
            Op::Leaf => Ok(vec![]),
            Op::MatMul { ta, tb } => {
                let (a, b, ta, tb) = (x(0), x(1), *ta, *tb);
                let ga = match (need[0], ta) {
                    (false, _) => None,
                    (true, false) => Some(g.matmul_t(b, false, !tb)?),
                    (true, true) => Some(b.matmul_t(g, tb, true)?),
                };
                let gb = match (need[1], tb) {
                    (false, _) => None,
                    (true, false) => Some(a.matmul_t(g, !ta, false)?),
                    (true, true) => Some(g.matmul_t(a, true, ta)?),
                };
                Ok(vec![ga, gb])
            }
            Op::Add => Ok(vec![Some(g), Some(g)]),
            Op::Sub => Ok(vec![Some(g), need[1].then(|| g.scale(-T::one()))]),
            Op::Mul => {
                let ga = if need[0] { Some(g.mul(x(1))?) } else { None };
                let gb = if need[1] { Some(g.mul(x(0))?) } else { None };
                Ok(vec![ga, gb])
            }
            Op::Minimum => {
                let (a, b) = (self.value_of(inputs[0]), self.value_of(inputs[1]));
                let take_a = self.leaf(a.zip_map(&b, |p, q| if p <= q { T::one() } else { T::zero() }));
                let take_b = self.leaf(a.zip_map(&b, |p, q| if p <= q { T::zero() } else { T::one() }));
                Ok(vec![Some(g.mul(take_a)?), Some(g.mul(take_b)?)])
            }
            Op::Scale(c) => one(g.scale(*c)),
            Op::Relu => one(g.mul(self.mask(inputs[0], |v| v > T::zero()))?),
            Op::Tanh => one(g.sub(g.mul(y)?.mul(y)?)?),
            Op::Exp => one(g.mul(y)?),
            Op::Log => one(g.mul(x(0).recip())?),
            Op::Recip => one(g.mul(y)?.mul(y)?.scale(-T::one())),
            Op::Abs => {
                let v = self.value_of(inputs[0]);
                // Subgradient 0 at exactly 0.
                let sign = self.leaf(v.map(|t| {
                    if t > T::zero() {
                        T::one()
                    } else if t < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }));
                one(g.mul(sign)?)
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let m = self.mask(inputs[0], move |v| lo.is_none_or(|l| v >= l) && hi.is_none_or(|h| v <= h));
                one(g.mul(m)?)
            }
            Op::Softmax => {
                let shape = y.shape();
                let mut row = shape.clone();
                *row.last_mut().expect("rank >= 1") = 1;
                let gy = g.mul(y)?;
                let s = gy.reduce_to(row)?.expand(shape)?;
                one(gy.sub(y.mul(s)?)?)
            }
            Op::Concat { axis } => {
                let mut start = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for (k, &id) in inputs.iter().enumerate() {
                    let w = self.value_of(id).shape()[*axis];
                    out.push(if need[k] { Some(g.slice(*axis, start, start + w)?) } else { None });
                    start += w;
                }
                Ok(out)
            }
            Op::Slice { axis, start, .. } => {
                let len = self.value_of(inputs[0]).shape()[*axis];
                one(g.pad(*axis, *start, len)?)
            }
            Op::Pad { axis, start, .. } => {
                let w = self.value_of(inputs[0]).shape()[*axis];
                one(g.slice(*axis, *start, *start + w)?)
            }
            Op::Sum => one(g.expand(x(0).shape())?),
            Op::Mean => {
                let shape = x(0).shape();
                let n = shape.iter().product::<usize>() as f64;
                one(g.expand(shape)?.scale(T::of(1.0 / n)))
            }
            Op::ReduceTo { .. } => one(g.expand(x(0).shape())?),
            Op::Expand { .. } => one(g.reduce_to(x(0).shape())?),
            Op::Transpose => one(g.transpose()?),
            Op::Reshape { .. } => one(g.reshape(x(0).shape())?),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn un(self, op: Op<T>) -> Self {
        self.tape.apply(op, &[self]).expect("elementwise unary op cannot fail")
    }

    fn bin(self, op: Op<T>, rhs: Self) -> Result<Self, TensorError> {
        self.tape.apply(op, &[self, rhs])
    }

    pub fn matmul(self, rhs: Self) -> Result<Self, TensorError> {
        self.bin(Op::MatMul { ta: false, tb: false }, rhs)
    }

    /// Matrix product with either operand's last two axes swapped, without copying.
    pub fn matmul_t(self, rhs: Self, ta: bool, tb: bool) -> Result<Self, TensorError> {
        self.bin(Op::MatMul { ta, tb }, rhs)
    }

    pub fn add(self, rhs: Self) -> Result<Self, TensorError> {
        self.bin(Op::Add, rhs)
    }

    pub fn sub(self, rhs: Self) -> Result<Self, TensorError> {
        self.bin(Op::Sub, rhs)
    }

    pub fn mul(self, rhs: Self) -> Result<Self, TensorError> {
        self.bin(Op::Mul, rhs)
    }

    pub fn minimum(self, rhs: Self) -> Result<Self, TensorError> {
        self.bin(Op::Minimum, rhs)
    }

    /// `self + rhs` with `rhs` broadcast (right-aligned) to `self`'s shape.
    pub fn add_bcast(self, rhs: Self) -> Result<Self, TensorError> {
        self.add(rhs.expand(self.shape())?)
    }

    pub fn mul_bcast(self, rhs: Self) -> Result<Self, TensorError> {
        self.mul(rhs.expand(self.shape())?)
    }

    pub fn scale(self, c: T) -> Self {
        self.un(Op::Scale(c))
    }

    pub fn relu(self) -> Self {
        self.un(Op::Relu)
    }

    pub fn tanh(self) -> Self {
        self.un(Op::Tanh)
    }

    pub fn exp(self) -> Self {
        self.un(Op::Exp)
    }

    pub fn log(self) -> Self {
        self.un(Op::Log)
    }

    pub fn recip(self) -> Self {
        self.un(Op::Recip)
    }

    pub fn abs(self) -> Self {
        self.un(Op::Abs)
    }

    pub fn clamp(self, lo: Option<T>, hi: Option<T>) -> Self {
        self.un(Op::Clamp { lo, hi })
    }

    pub fn softmax(self) -> Self {
        self.un(Op::Softmax)
    }

    pub fn sum(self) -> Self {
        self.un(Op::Sum)
    }

    pub fn mean(self) -> Self {
        self.un(Op::Mean)
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self, TensorError> {
        self.tape.apply(Op::Slice { axis, start, end }, &[self])
    }

    pub fn pad(self, axis: usize, start: usize, len: usize) -> Result<Self, TensorError> {
        self.tape.apply(Op::Pad { axis, start, len }, &[self])
    }

    pub fn reduce_to(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        self.tape.apply(Op::ReduceTo { shape }, &[self])
    }

    pub fn expand(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        if self.shape() == shape {
            return Ok(self);
        }
        self.tape.apply(Op::Expand { shape }, &[self])
    }

    pub fn transpose(self) -> Result<Self, TensorError> {
        self.tape.apply(Op::Transpose, &[self])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        self.tape.apply(Op::Reshape { shape }, &[self])
    }

    /// Sum over the last axis, keeping it as a length-1 axis.
    pub fn sum_last(self) -> Result<Self, TensorError> {
        let mut shape = self.shape();
        *shape.last_mut().expect("rank >= 1") = 1;
        self.reduce_to(shape)
    }
}
