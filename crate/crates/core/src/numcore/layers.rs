//! Small parameterized building blocks shared by attention and the network.

use super::{DiffTensor, Init, ParamStore, Scalar};
use crate::error::Result;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone)]
pub struct Linear<T: Scalar> {
    pub w: DiffTensor<T>,
    pub b: Option<DiffTensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform init with bound `1/sqrt(in)`; bias starts at zero.
    pub fn new(ps: &mut ParamStore<T>, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self::with_init(ps, name, input, output, bias, Init::Uniform(bound))
    }

    pub fn with_init(
        ps: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        ps.scope(name, |ps| Linear {
            w: ps.tensor("w", &[input, output], init),
            b: bias.then(|| ps.tensor("b", &[output], Init::Zeros)),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let y = x.matmul(&self.w)?;
        match &self.b {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[derive(Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gain: DiffTensor<T>,
    pub bias: DiffTensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub const EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        ps.scope(name, |ps| LayerNorm {
            gain: ps.tensor("gain", &[dim], Init::Ones),
            bias: ps.tensor("bias", &[dim], Init::Zeros),
        })
    }

    pub fn forward(&self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        x.layer_norm(&self.gain, &self.bias, T::of(Self::EPS))
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone)]
pub struct Mlp<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(ps: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        ps.scope(name, |ps| Mlp {
            fc1: Linear::new(ps, "fc1", input, hidden, true),
            fc2: Linear::new(ps, "fc2", hidden, output, true),
        })
    }

    pub fn forward(&self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}
