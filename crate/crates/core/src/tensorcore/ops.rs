//! Operation kinds and their pure forward kernels.

use super::tensor::{axis_extents, broadcast_source_index, broadcastable, Tensor};
use super::TensorError;
use crate::scalar::Scalar;

/// A differentiable operation recorded on the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    /// Parameter, marked input or constant.
    Leaf,
    /// `op(a)·op(b)` for rank-2 or batched rank-3 operands, where `op`
    /// swaps the last two axes when the flag is set.
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Scale(T),
    Relu,
    Tanh,
    Exp,
    Log,
    Recip,
    Abs,
    Clamp { lo: Option<T>, hi: Option<T> },
    Minimum,
    /// Along the last axis.
    Softmax,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Zero-pads along `axis` so the input occupies `[start, start + len_in)` of `len`.
    Pad { axis: usize, start: usize, len: usize },
    Sum,
    Mean,
    /// Sums broadcast dimensions down to `shape` (right-aligned).
    ReduceTo { shape: Vec<usize> },
    /// Broadcasts up to `shape` (right-aligned).
    Expand { shape: Vec<usize> },
    /// Swaps the last two axes.
    Transpose,
    Reshape { shape: Vec<usize> },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Recip => "recip",
            Op::Abs => "abs",
            Op::Clamp { .. } => "clamp",
            Op::Minimum => "minimum",
            Op::Softmax => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::ReduceTo { .. } => "reduce_to",
            Op::Expand { .. } => "expand",
            Op::Transpose => "transpose",
            Op::Reshape { .. } => "reshape",
        }
    }
}

fn mismatch<T>(op: &Op<T>, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op: op.name(),
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn arity<T>(op: &Op<T>, inputs: &[&Tensor<T>], n: usize) -> Result<(), TensorError> {
    if inputs.len() != n {
        return Err(TensorError::Arity {
            op: op.name(),
            expected: n,
            got: inputs.len(),
        });
    }
    Ok(())
}

/// Evaluates `op` on concrete inputs. Used both when recording and when replaying a tape.
pub fn eval<T: Scalar>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    match op {
        Op::Leaf => Err(TensorError::Arity {
            op: "leaf",
            expected: 0,
            got: inputs.len(),
        }),
        Op::MatMul { ta, tb } => {
            arity(op, inputs, 2)?;
            matmul(op, inputs[0], *ta, inputs[1], *tb)
        }
        Op::Add | Op::Sub | Op::Mul | Op::Minimum => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            Ok(match op {
                Op::Add => a.zip_map(b, |x, y| x + y),
                Op::Sub => a.zip_map(b, |x, y| x - y),
                Op::Mul => a.zip_map(b, |x, y| x * y),
                _ => a.zip_map(b, |x, y| if x <= y { x } else { y }),
            })
        }
        Op::Concat { axis } => concat(op, inputs, *axis),
        _ => {
            arity(op, inputs, 1)?;
            unary(op, inputs[0])
        }
    }
}

fn unary<T: Scalar>(op: &Op<T>, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    Ok(match op {
        Op::Scale(c) => {
            let c = *c;
            x.map(|v| v * c)
        }
        Op::Relu => x.map(|v| if v <= T::zero() { T::zero() } else { v }),
        Op::Tanh => x.map(|v| v.tanh()),
        Op::Exp => x.map(|v| v.exp()),
        Op::Log => x.map(|v| v.ln()),
        Op::Recip => x.map(|v| v.recip()),
        Op::Abs => x.map(|v| v.abs()),
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            x.map(|mut v| {
                if let Some(l) = lo {
                    if v < l {
                        v = l;
                    }
                }
                if let Some(h) = hi {
                    if v > h {
                        v = h;
                    }
                }
                v
            })
        }
        Op::Softmax => softmax(x),
        Op::Slice { axis, start, end } => {
            let (axis, start, end) = (*axis, *start, *end);
            if axis >= x.rank() || start >= end || end > x.shape()[axis] {
                return Err(TensorError::BadAxis {
                    op: op.name(),
                    shape: x.shape().to_vec(),
                    detail: format!("axis {axis} range {start}..{end}"),
                });
            }
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            let w = end - start;
            let mut data = Vec::with_capacity(outer * w * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = w;
            Tensor::new(shape, data)?
        }
        Op::Pad { axis, start, len } => {
            let (axis, start, total) = (*axis, *start, *len);
            if axis >= x.rank() || start + x.shape()[axis] > total {
                return Err(TensorError::BadAxis {
                    op: op.name(),
                    shape: x.shape().to_vec(),
                    detail: format!("axis {axis} offset {start} into {total}"),
                });
            }
            let (outer, w, inner) = axis_extents(x.shape(), axis);
            let mut shape = x.shape().to_vec();
            shape[axis] = total;
            let mut data = vec![T::zero(); outer * total * inner];
            for o in 0..outer {
                let dst = o * total * inner + start * inner;
                data[dst..dst + w * inner].copy_from_slice(&x.data()[o * w * inner..(o + 1) * w * inner]);
            }
            Tensor::new(shape, data)?
        }
        Op::Sum => Tensor::scalar(x.data().iter().copied().sum()),
        Op::Mean => Tensor::scalar(x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64)),
        Op::ReduceTo { shape } => {
            if !broadcastable(shape, x.shape()) || shape.contains(&0) {
                return Err(mismatch(op, x.shape(), shape));
            }
            let idx = broadcast_source_index(shape, x.shape());
            let mut data = vec![T::zero(); shape.iter().product()];
            for (&v, &i) in x.data().iter().zip(&idx) {
                data[i] = data[i] + v;
            }
            Tensor::new(shape.clone(), data)?
        }
        Op::Expand { shape } => {
            if !broadcastable(x.shape(), shape) || shape.contains(&0) {
                return Err(mismatch(op, x.shape(), shape));
            }
            let idx = broadcast_source_index(x.shape(), shape);
            Tensor::new(shape.clone(), idx.iter().map(|&i| x.data()[i]).collect())?
        }
        Op::Transpose => {
            if x.rank() < 2 {
                return Err(TensorError::BadAxis {
                    op: op.name(),
                    shape: x.shape().to_vec(),
                    detail: "rank < 2".into(),
                });
            }
            let r = x.rank();
            let (n, m) = (x.shape()[r - 2], x.shape()[r - 1]);
            let batch = x.numel() / (n * m);
            let mut data = vec![T::zero(); x.numel()];
            for b in 0..batch {
                let src = &x.data()[b * n * m..(b + 1) * n * m];
                let dst = &mut data[b * n * m..(b + 1) * n * m];
                for i in 0..n {
                    for j in 0..m {
                        dst[j * n + i] = src[i * m + j];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.swap(r - 2, r - 1);
            Tensor::new(shape, data)?
        }
        Op::Reshape { shape } => {
            if shape.iter().product::<usize>() != x.numel() {
                return Err(mismatch(op, x.shape(), shape));
            }
            x.reshaped(shape.clone())?
        }
        Op::Leaf | Op::MatMul { .. } | Op::Add | Op::Sub | Op::Mul | Op::Minimum | Op::Concat { .. } => {
            unreachable!("binary or n-ary op routed to unary kernel")
        }
    })
}

fn matmul<T: Scalar>(op: &Op<T>, a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    let r = sa.len();
    if r != sb.len() || !(r == 2 || r == 3) || (r == 3 && sa[0] != sb[0]) {
        return Err(mismatch(op, sa, sb));
    }
    let dims = |s: &[usize], t: bool| {
        let (x, y) = (s[r - 2], s[r - 1]);
        if t {
            (y, x)
        } else {
            (x, y)
        }
    };
    let ((n, k), (k2, m)) = (dims(sa, ta), dims(sb, tb));
    if k != k2 {
        return Err(mismatch(op, sa, sb));
    }
    let bs = if r == 3 { sa[0] } else { 1 };
    let mut c = vec![T::zero(); bs * n * m];
    for i in 0..bs {
        T::gemm(
            n,
            k,
            m,
            &a.data()[i * n * k..(i + 1) * n * k],
            ta,
            &b.data()[i * k * m..(i + 1) * k * m],
            tb,
            &mut c[i * n * m..(i + 1) * n * m],
        );
    }
    let shape = if r == 3 { vec![bs, n, m] } else { vec![n, m] };
    Tensor::new(shape, c)
}

fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("non-empty shape");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out
}

fn concat<T: Scalar>(op: &Op<T>, inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    let first = inputs.first().ok_or(TensorError::Arity {
        op: op.name(),
        expected: 1,
        got: 0,
    })?;
    if axis >= first.rank() {
        return Err(TensorError::BadAxis {
            op: op.name(),
            shape: first.shape().to_vec(),
            detail: format!("axis {axis}"),
        });
    }
    let mut total = 0;
    for t in inputs {
        let compatible = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(mismatch(op, first.shape(), t.shape()));
        }
        total += t.shape()[axis];
    }
    let (outer, _, inner) = axis_extents(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let w = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}
