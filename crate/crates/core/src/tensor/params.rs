use std::collections::BTreeMap;

use rand::Rng;

use super::{Tensor, TensorError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

/// Named trainable tensors plus their gradient buffers and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform(-scale, scale) initialisation, used for embedding tables.
    pub fn uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Glorot-uniform initialisation for a `[fan_in, fan_out]` weight matrix.
    pub fn glorot<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], limit, rng)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![1.0; n])?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads` (as returned by a backward pass) into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.0 {
            self.params[id.0].grad.add_assign(g);
        }
    }

    /// Squared L2 norm over every parameter.
    pub fn l2_squared(&self) -> f64 {
        self.params.iter().map(|p| p.value.sum_squares()).sum()
    }

    /// Overwrite values from `other`, which must hold identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| TensorError::MissingParam(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_values",
                    shapes: vec![p.value.shape().to_vec(), src.value.shape().to_vec()],
                });
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Sparse per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients(pub BTreeMap<ParamId, Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.0 {
            match self.0.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.0.insert(id, g);
                }
            }
        }
    }
}
