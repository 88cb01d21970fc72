//! Named parameter storage and initialization.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Registration order is the
/// checkpoint manifest order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("parameter {name} registered twice")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Overwrites every parameter from `(name, tensor)` pairs, requiring the
    /// same names and shapes as the current contents.
    pub fn load<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = 0;
        for (name, tensor) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
            if self.values[id.0].shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    tensor.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = tensor.clone();
            seen += 1;
        }
        if seen != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Child initializer whose names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> Init<'_> {
        Init {
            prefix: self.qualify(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// `fan_in × fan_out` weight, uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.tensor(name, Tensor::from_parts(vec![fan_in, fan_out], data))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::filled(shape.to_vec(), value))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let full = self.qualify(name);
        self.store.add(full, value)
    }

    /// Overwrites every entry of an already registered parameter.
    pub fn fill(&mut self, id: ParamId, value: f64) {
        self.store.value_mut(id).data_mut().fill(value);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}
