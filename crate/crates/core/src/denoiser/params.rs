use crate::denoiser::ops::Real;
use crate::error::{Error, Result};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Index of a tensor inside a [`ParamStore`].
pub type ParamId = usize;

/// Ordered collection of named tensors; also used for gradients and
/// optimizer moments, which share the layout of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.tensors[id].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.tensors[id].data
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v * factor;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn sum_squares(&self) -> f64 {
        self.values().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Checks that names and shapes agree tensor by tensor.
    pub fn ensure_same_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::shape(
                format!("{} tensors", self.tensors.len()),
                format!("{} tensors", other.tensors.len()),
            ));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::shape(
                    format!("{} {:?}", a.name, a.shape),
                    format!("{} {:?}", b.name, b.shape),
                ));
            }
        }
        Ok(())
    }

    /// Converts element type (e.g. f32 checkpoints to f64 for analysis).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }
}
