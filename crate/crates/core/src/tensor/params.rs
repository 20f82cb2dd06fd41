use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, shaped parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    decay: Vec<bool>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            decay: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; `decay` marks it for decoupled weight decay.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>, decay: bool) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter shape/data mismatch");
        self.names.push(name.into());
        self.shapes.push(shape.to_vec());
        self.values.push(values);
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Copies values from `other` where names and shapes match; returns the
    /// number of parameters copied.
    pub fn load_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for id in other.ids() {
            if let Some(mine) = self.find(other.name(id)) {
                if self.shape(mine) == other.shape(id) {
                    self.values[mine.0].copy_from_slice(other.value(id));
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Same parameter layout in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::c(x.f64())).collect())
                .collect(),
            decay: self.decay.clone(),
        }
    }

    pub fn check_same_layout(&self, other_shapes: &[Vec<usize>]) -> Result<()> {
        if self.shapes != other_shapes {
            return Err(Error::InternalState("parameter layout mismatch".into()));
        }
        Ok(())
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            values: params.ids().map(|id| vec![T::zero(); params.value(id).len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }

    /// Element-wise sum, as a synchronous all-reduce across replicas would produce.
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flat_map(|g| g.iter()).all(|v| v.is_finite())
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(T::c(max_norm / n));
        }
        n
    }
}
