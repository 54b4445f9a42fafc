use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named parameter array with its accumulated gradient.
///
/// Dense weights are stored row-major with shape `[out, in]`; embedding
/// tables with shape `[rows, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config(format!(
                "parameter {name}: shape {shape:?} must have positive dimensions"
            )));
        }
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::config(format!(
                "parameter {name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(Self {
            name,
            shape,
            grad: vec![0.0; len],
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(name, shape, vec![0.0; len])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub(crate) fn values_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    /// Row `index` of a 2-D tensor.
    pub fn row(&self, index: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.values[index * cols..(index + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Owner of every trainable array of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl AsMut<ParamStore> for ParamStore {
    fn as_mut(&mut self) -> &mut ParamStore {
        self
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: ParamTensor) -> ParamId {
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform weight matrix `[out, in]`.
    pub fn dense_weights<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s).map_err(|e| Error::config(e.to_string()))?;
        let values = (0..out_dim * in_dim).map(|_| dist.sample(rng)).collect();
        Ok(self.push(ParamTensor::new(name, vec![out_dim, in_dim], values)?))
    }

    pub fn zero_bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        Ok(self.push(ParamTensor::zeros(name, vec![len])?))
    }

    /// Embedding table `[rows, dim]` drawn from N(0, 0.05²).
    pub fn embedding_table<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, 0.05).expect("valid normal");
        let values = (0..rows * dim).map(|_| normal.sample(rng)).collect();
        Ok(self.push(ParamTensor::new(name, vec![rows, dim], values)?))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// Multiplies every accumulated gradient by `factor`.
    pub fn scale_grad(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .map(ParamId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_and_grad_share_shape() {
        let t = ParamTensor::new("w", vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.values().len(), t.grad().len());
        assert!(ParamTensor::new("w", vec![2, 3], vec![1.0; 5]).is_err());
        assert!(ParamTensor::zeros("w", vec![0, 3]).is_err());
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.dense_weights("w", 10, 20, &mut rng).unwrap();
        let s = (6.0f64 / 30.0).sqrt();
        assert!(store.get(id).values().iter().all(|v| v.abs() <= s));
        assert_eq!(store.get(id).shape(), &[10, 20]);
    }
}
