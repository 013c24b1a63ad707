use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiffTensor, Scalar, StoredParam};
use crate::error::{Error, Result};

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Named registry of learnable tensors with a seeded initializer.
///
/// Names are hierarchical (`enc.0.block.1.mga.q2.w`); the order of
/// registration is the checkpoint order.
pub struct ParamStore<T: Scalar> {
    params: Vec<(String, DiffTensor<T>)>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `name` pushed onto the naming scope.
    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> DiffTensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform(b) => (0..n).map(|_| T::of(self.rng.random_range(-b..=b))).collect(),
        };
        let t = DiffTensor::param(shape, data).expect("consistent shape");
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.params.push((full, t.clone()));
        t
    }

    pub fn params(&self) -> &[(String, DiffTensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(String, DiffTensor<T>)> {
        self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Copies stored values into live parameters, matching by name and shape.
pub fn load_params<T: Scalar>(params: &[(String, DiffTensor<T>)], stored: &[StoredParam]) -> Result<()> {
    if params.len() != stored.len() {
        return Err(Error::Parameter(format!(
            "checkpoint holds {} tensors, model has {}",
            stored.len(),
            params.len()
        )));
    }
    for (name, t) in params {
        let s = stored
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::Parameter(format!("checkpoint lacks parameter {name}")))?;
        if s.shape != t.shape() {
            return Err(Error::Parameter(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                s.shape,
                t.shape()
            )));
        }
        t.set_data(s.values.iter().map(|&v| T::of(v as f64)).collect())?;
    }
    Ok(())
}
