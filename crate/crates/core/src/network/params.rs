use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::arch::Architecture;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of each parameter tensor in storage order.
pub(crate) mod slot {
    pub const CONV_WEIGHT: [usize; 3] = [0, 2, 4];
    pub const CONV_BIAS: [usize; 3] = [1, 3, 5];
    pub const FC1: (usize, usize) = (6, 7);
    pub const FC2: (usize, usize) = (8, 9);
    pub const OUT: (usize, usize) = (10, 11);
}

/// Learnable tensors of one network, or a gradient of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f32> {
    arch: Architecture,
    names: Vec<&'static str>,
    tensors: Vec<Tensor<T>>,
}

/// Gradients share the parameter layout.
pub type Gradients<T = f32> = NetworkParams<T>;

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (names, tensors) = arch
            .param_shapes()?
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .unzip();
        Ok(NetworkParams {
            arch,
            names,
            tensors,
        })
    }

    /// He-normal weights (`σ = √(2/fan_in)`) and zero biases.
    pub fn he_init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        for t in params.tensors.iter_mut().step_by(2) {
            let fan_in: usize = t.shape()[1..].iter().product();
            let normal: Normal<f64> =
                Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std dev");
            for v in t.data_mut() {
                *v = T::of(normal.sample(rng));
            }
        }
        Ok(params)
    }

    /// Builds from named tensors in storage order, checking every name and
    /// shape against the architecture.
    pub fn from_named(arch: Architecture, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        if named.len() != params.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                params.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, tensor)) in named.into_iter().enumerate() {
            if name != params.names[i] {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is named {name:?}, expected {:?}",
                    params.names[i]
                )));
            }
            if tensor.shape() != params.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    params.tensors[i].shape()
                )));
            }
            params.tensors[i] = tensor;
        }
        Ok(params)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        self.names.iter().copied().zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.named().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Element-wise `self += other`; both must share one architecture.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.arch, other.arch);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub(crate) fn pair(&self, (w, b): (usize, usize)) -> (&Tensor<T>, &Tensor<T>) {
        (&self.tensors[w], &self.tensors[b])
    }

    pub(crate) fn set(&mut self, index: usize, tensor: Tensor<T>) {
        debug_assert_eq!(tensor.shape(), self.tensors[index].shape());
        self.tensors[index] = tensor;
    }
}
