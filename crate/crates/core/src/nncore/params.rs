use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Models hold [`ParamId`]s into a store, so the
/// same model description runs at either precision.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Creates a leaf parameter drawn from `init` using `rng`.
    pub fn init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Constant(v) => Tensor::full(shape, F::of(v)),
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)))
            }
        };
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Same parameters at another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Copies values by name from `(name, tensor)` pairs; every parameter
    /// must be present with a matching shape.
    pub fn load_named<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<F>)>) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in entries {
            if let Some(id) = self.find(name) {
                if self.values[id.0].shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                        t.shape(),
                        self.values[id.0].shape()
                    )));
                }
                self.values[id.0] = t.clone();
                seen[id.0] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("parameter {} missing from checkpoint", self.names[i])));
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers matching a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<F> {
    pub(crate) bufs: Vec<Vec<F>>,
}

impl<F: Real> Grads<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self { bufs: store.values.iter().map(|t| vec![F::zero(); t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.bufs[id.0]
    }

    /// `self += other`, in parameter order.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x = *x + *y);
        }
    }

    pub fn scale(&mut self, s: F) {
        self.bufs.iter_mut().flatten().for_each(|x| *x = *x * s);
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.bufs.iter().flatten().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }
}
