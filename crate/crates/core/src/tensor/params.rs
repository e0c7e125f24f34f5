use std::collections::HashMap;
use std::fmt;
use std::ops::{Index, IndexMut};

use super::{init_gaussian, init_orthogonal, Rng, Tensor};
use crate::error::{Error, Result};

/// Stddev for Gaussian-initialized (non-recurrent) matrices.
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    Gaussian,
    Orthogonal,
    Zero,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Gaussian => "gaussian",
            InitScheme::Orthogonal => "orthogonal",
            InitScheme::Zero => "zero",
        })
    }
}

/// Handle to one registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with a gradient slot per entry.
///
/// Every mutation of a value bumps `generation`, which forward caches record so
/// a backward pass can detect that parameters moved underneath it.
#[derive(Clone, Debug)]
pub struct ParamRegistry {
    names: Vec<String>,
    schemes: Vec<InitScheme>,
    frozen: Vec<bool>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
    generation: u64,
    init_std: f64,
}

/// Read-only view of parameter values, indexable by [`ParamId`].
#[derive(Clone, Copy)]
pub struct ParamValues<'a> {
    values: &'a [Tensor],
    generation: u64,
}

/// Mutable view of gradient slots.
pub struct Grads<'a>(&'a mut [Tensor]);

impl Index<ParamId> for ParamValues<'_> {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }
}

impl ParamValues<'_> {
    /// Registry generation at the time the view was taken.
    pub fn generation(&self) -> u64 {
        self.generation
    }
}

impl Index<ParamId> for Grads<'_> {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for Grads<'_> {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }
}

impl Default for ParamRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::with_init_std(DEFAULT_INIT_STD)
    }

    pub fn with_init_std(init_std: f64) -> Self {
        ParamRegistry {
            names: Vec::new(),
            schemes: Vec::new(),
            frozen: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            generation: 0,
            init_std,
        }
    }

    pub fn init_std(&self) -> f64 {
        self.init_std
    }

    /// Registers a parameter initialized according to `scheme`.
    ///
    /// Orthogonal parameters of shape `[k·n, n]` are built from `k`
    /// independently sampled orthogonal blocks (the stacked gate layout of a GRU).
    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        scheme: InitScheme,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let value = match scheme {
            InitScheme::Gaussian => init_gaussian(shape, self.init_std, rng)?,
            InitScheme::Zero => Tensor::zeros(shape)?,
            InitScheme::Orthogonal => {
                if shape.len() != 2 || shape[1] == 0 || shape[0] % shape[1] != 0 {
                    return Err(Error::invalid(format!(
                        "orthogonal parameter {name} needs shape [k*n, n], got {shape:?}"
                    )));
                }
                let n = shape[1];
                let mut data = Vec::with_capacity(shape[0] * n);
                for _ in 0..shape[0] / n {
                    data.extend_from_slice(init_orthogonal(&[n, n], rng)?.data());
                }
                Tensor::from_vec(shape, data)?
            }
        };
        self.insert(name, value, scheme)
    }

    /// Registers an already-built tensor.
    pub fn insert(&mut self, name: &str, value: Tensor, scheme: InitScheme) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.grads.push(Tensor::zeros(value.shape())?);
        self.values.push(value);
        self.names.push(name.to_string());
        self.schemes.push(scheme);
        self.frozen.push(false);
        self.index.insert(name.to_string(), id);
        self.generation += 1;
        Ok(ParamId(id))
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn scheme(&self, id: ParamId) -> InitScheme {
        self.schemes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.generation += 1;
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn values(&self) -> ParamValues<'_> {
        ParamValues {
            values: &self.values,
            generation: self.generation,
        }
    }

    /// Simultaneous read access to values and write access to gradients.
    pub fn split_mut(&mut self) -> (ParamValues<'_>, Grads<'_>) {
        let values = ParamValues {
            values: &self.values,
            generation: self.generation,
        };
        (values, Grads(&mut self.grads))
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Euclidean norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.ids()
            .filter(|&id| !self.is_frozen(id))
            .flat_map(|id| self.grads[id.0].data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }

    /// Overwrites every value from `entries`, which must name exactly the
    /// registered parameters with matching shapes.
    pub fn load_snapshot(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::format(format!(
                "checkpoint has {} parameters, model expects {}",
                entries.len(),
                self.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| Error::format(format!("unknown parameter {name} in checkpoint")))?;
            if t.shape() != self.values[id.0].shape() {
                return Err(Error::format(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
        }
        for (name, t) in entries {
            let id = self.id(name).expect("checked above");
            *self.value_mut(id) = t.clone();
        }
        Ok(())
    }
}
