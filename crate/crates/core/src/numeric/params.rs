use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Matrix,
    grad: Matrix,
}

/// Named trainable matrices with gradient buffers of identical shape.
///
/// Iteration order is by name, which keeps every consumer (optimizer,
/// checkpoint writer, gradient checker) deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Fails if the name is taken.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                left: slot.value.shape(),
                right: value.shape(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Adds `delta` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Matrix) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.grad.shape() != delta.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                left: slot.grad.shape(),
                right: delta.shape(),
            });
        }
        for (g, d) in slot.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub(crate) fn iter_mut_with_grad(&mut self) -> impl Iterator<Item = (&str, &mut Matrix, &Matrix)> {
        self.slots
            .iter_mut()
            .map(|(k, s)| (k.as_str(), &mut s.value, &s.grad))
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.data().len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::zeros(2, 2)).unwrap();
        assert!(p.insert("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn accumulate_and_zero() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::zeros(1, 2)).unwrap();
        let d = Matrix::row_vector(&[1.0, 2.0]).unwrap();
        p.accumulate_grad("w", &d).unwrap();
        p.accumulate_grad("w", &d).unwrap();
        assert_eq!(p.grad("w").unwrap().data(), &[2.0, 4.0]);
        p.zero_grads();
        assert_eq!(p.grad("w").unwrap().data(), &[0.0, 0.0]);
        assert!(p.accumulate_grad("w", &Matrix::zeros(2, 1)).is_err());
        assert_eq!(p.accumulate_grad("nope", &d), Err(Error::UnknownParam("nope".into())));
    }
}
