//! Small layer building blocks over [`ParamStore`].

use super::params::{Bound, ParamId, ParamStore};
use super::tape::Var;
use super::TensorError;
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Affine map `x W + b` on row-major `[rows, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), vec![fan_in, fan_out], fan_in, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), vec![fan_out], fan_in, rng));
        Self { w, b, fan_in, fan_out }
    }

    /// Zero-initialised layer (used for output heads).
    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        use super::tensor::Tensor;
        let w = store.add(format!("{name}.w"), Tensor::zeros(vec![fan_in, fan_out]));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let y = x.matmul(p[self.w])?;
        match self.b {
            Some(b) => y.add_bcast(p[b]),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Multi-layer perceptron; the activation follows every hidden layer and,
/// when `activate_output` is set, the final layer too.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_output: bool,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, mut x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x)?;
            if i < last || self.activate_output {
                x = self.activation.apply(x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}
