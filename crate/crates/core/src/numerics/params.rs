use alloc::string::String;
use alloc::vec::Vec;

use super::{NumericsError, Scalar, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the tensor called `name`; shapes must agree.
    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<(), NumericsError> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| NumericsError::UnknownParam { name: name.into() })?;
        if self.tensors[i].shape() != t.shape() {
            return Err(NumericsError::shape_mismatch("set", self.tensors[i].shape(), t.shape()));
        }
        self.tensors[i] = t;
        Ok(())
    }

    /// Puts every tensor on `tape`, tracked when `trainable`.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}
