use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Initialisation scheme a parameter was created with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
    /// Restored from a checkpoint.
    Loaded,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub init: Init,
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Named, ordered collection of learnable parameters.
///
/// Each store carries an identity so that a graph mixing parameters of
/// several stores routes gradients only to the store they came from.
/// Clones share the identity.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    uid: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            uid: next_uid(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let value = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..bound)))
            }
            Init::Zeros | Init::Loaded => Tensor::zeros(rows, cols),
            Init::Ones => Tensor::full(rows, cols, T::one()),
        };
        self.insert(name.into(), value, init)
    }

    pub fn insert(&mut self, name: String, value: Tensor<T>, init: Init) -> ParamId {
        debug_assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let [r, c] = value.shape();
        self.params.push(Parameter {
            name,
            value,
            grad: Tensor::zeros(r, c),
            init,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Copy with every value converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            uid: next_uid(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    init: p.init,
                })
                .collect(),
        }
    }
}
