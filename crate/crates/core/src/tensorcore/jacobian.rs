//! Input Jacobians of per-output scalars, recorded on the tape so that
//! penalties built from them remain differentiable.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::TensorError;
use crate::scalar::Scalar;

/// Per-sample input gradients of each output.
///
/// `outputs[j]` holds one scalar per sample (shape `[B]` or `[B, 1]`), and
/// samples must not interact, so the gradient of `sum_b outputs[j][b]`
/// with respect to an input block `[B, d]` carries sample `b`'s partial
/// derivatives in row `b`. One backward pass is issued per output.
///
/// Returns `jac[j][i]`, the `[B, d_i]` derivative block of output `j`
/// with respect to input `i`.
pub fn input_jacobian<'t, T: Scalar>(
    tape: &'t Tape<T>,
    outputs: &[Var<'t, T>],
    inputs: &[Var<'t, T>],
) -> Result<Vec<Vec<Var<'t, T>>>, TensorError> {
    outputs
        .iter()
        .map(|out| tape.grad(out.sum(), inputs))
        .collect()
}

/// `sum_{j,i} |jac[j][i]|` summed over every sample and input dimension.
pub fn abs_sum<'t, T: Scalar>(tape: &'t Tape<T>, jac: &[Vec<Var<'t, T>>]) -> Result<Var<'t, T>, TensorError> {
    let mut total: Option<Var<'t, T>> = None;
    for block in jac.iter().flatten() {
        let s = block.abs().sum();
        total = Some(match total {
            Some(acc) => acc.add(s)?,
            None => s,
        });
    }
    Ok(total.unwrap_or_else(|| tape.scalar(T::zero())))
}

/// Dense Jacobian `[input_dim, output_dim]` of `f` at a single point `x`.
///
/// `f` receives a `[1, input_dim]` var and must return `[1, output_dim]`.
/// Non-finite entries are reported as [`TensorError::NonFinite`].
pub fn jacobian_at<T: Scalar>(
    x: &Tensor<T>,
    f: impl for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>, TensorError>,
) -> Result<Tensor<T>, TensorError> {
    let tape = Tape::new();
    let d = x.numel();
    let xin = tape.leaf(x.reshaped(vec![1, d])?);
    let y = f(&tape, xin)?;
    let m = y.shape().iter().product::<usize>();
    let mut out = vec![T::zero(); d * m];
    for j in 0..m {
        let yj = y.reshape(vec![m])?.slice(0, j, j + 1)?;
        let g = tape.grad_values(yj.sum(), &[xin])?;
        for (i, &v) in g[0].data().iter().enumerate() {
            out[i * m + j] = v;
        }
    }
    let jac = Tensor::new(vec![d, m], out)?;
    if !jac.is_finite() {
        return Err(TensorError::NonFinite {
            context: "input jacobian".into(),
        });
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_gives_zero_entry_and_identity_gives_identity() {
        let w = Tensor::<f64>::from_f64(vec![2, 2], &[1.5, 0.0, -2.0, 0.7]).unwrap();
        let x = Tensor::<f64>::from_f64(vec![2], &[0.3, -0.4]).unwrap();
        let jac = jacobian_at(&x, |tape, v| v.matmul(tape.leaf(w.clone()))).unwrap();
        // y_j = sum_i x_i w[i][j]  =>  dy_j/dx_i = w[i][j]
        assert_eq!(jac.data(), w.data());
        assert_eq!(jac.at2(0, 1), 0.0);

        let id = jacobian_at(&x, |_, v| Ok(v.scale(1.0))).unwrap();
        assert_eq!(id.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn linear_penalty_is_abs_weight_with_unit_subgradient() {
        // y = w x  =>  penalty |dy/dx| = |w|, d|w|/dw = sign(w) = 1 at w = 2.
        let tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_f64(vec![1, 1], &[2.0]).unwrap());
        let x = tape.leaf(Tensor::from_f64(vec![1, 1], &[0.7]).unwrap());
        let y = x.matmul(w).unwrap();
        let jac = input_jacobian(&tape, &[y], &[x]).unwrap();
        let pen = abs_sum(&tape, &jac).unwrap();
        assert_eq!(pen.item(), 2.0);
        let g = tape.grad_values(pen, &[w]).unwrap();
        assert_eq!(g[0].item(), 1.0);
    }

    #[test]
    fn zero_weight_network_has_zero_penalty_and_gradient() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::zeros(vec![3, 2]));
        let x = tape.leaf(Tensor::from_f64(vec![1, 3], &[0.1, 0.2, 0.3]).unwrap());
        let y = x.matmul(w).unwrap().tanh();
        let outs: Vec<_> = (0..2).map(|j| y.slice(1, j, j + 1).unwrap()).collect();
        let jac = input_jacobian(&tape, &outs, &[x]).unwrap();
        let pen = abs_sum(&tape, &jac).unwrap();
        assert_eq!(pen.item(), 0.0);
        let g = tape.grad_values(pen, &[w]).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 0.0));
    }
}
