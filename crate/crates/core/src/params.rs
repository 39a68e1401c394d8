//! Tensors and named parameter collections.
//!
//! A [`ParamSet`] is the unit every other module works with: model weights,
//! gradients, optimizer moments, Fisher estimates and consolidated models are
//! all parameter sets keyed by tensor name. Iteration order is lexicographic
//! so anything derived from a set (checkpoints, CSV rows, merges) is stable.

use std::collections::btree_map;
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type used by the model and parameter sets.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn widen(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn widen(self) -> f64 {
        self
    }
}

/// Dense row-major tensor. A shape of `[]` denotes a scalar holding one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        if numel == 0 {
            return Err(Error::invalid(format!("tensor shape {shape:?} is empty")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product::<usize>().max(1);
        Self { shape, data: vec![T::zero(); numel] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::of(x.widen())).collect() }
    }
}

/// Ordered map from tensor name to tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Like [`get`](Self::get) but reports a missing tensor as an error.
    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Incompatible { name: name.to_string(), detail: "tensor missing".into() })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Tensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> btree_map::IterMut<'_, String, Tensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks that `other` has the same names and per-name shapes.
    /// The error names the first mismatch in name order.
    pub fn check_compatible<U: Scalar>(&self, other: &ParamSet<U>) -> Result<()> {
        let mut a = self.tensors.iter();
        let mut b = other.tensors.iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ok(()),
                (Some((name, _)), None) => {
                    return Err(Error::Incompatible { name: name.clone(), detail: "missing from second set".into() })
                }
                (None, Some((name, _))) => {
                    return Err(Error::Incompatible { name: name.clone(), detail: "missing from first set".into() })
                }
                (Some((na, ta)), Some((nb, tb))) => {
                    if na != nb {
                        let (name, side) = if na < nb { (na, "second") } else { (nb, "first") };
                        return Err(Error::Incompatible {
                            name: name.clone(),
                            detail: format!("missing from {side} set"),
                        });
                    }
                    if ta.shape() != tb.shape() {
                        return Err(Error::Incompatible {
                            name: na.clone(),
                            detail: format!("shape {:?} vs {:?}", ta.shape(), tb.shape()),
                        });
                    }
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec()))).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// `self += scale * other`, elementwise. Sets must be compatible.
    pub fn add_scaled(&mut self, other: &ParamSet<T>, scale: T) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, dst), (_, src)) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data().iter().all(|x| x.is_finite()))
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for ParamSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

impl<'a, T> IntoIterator for &'a ParamSet<T> {
    type Item = (&'a String, &'a Tensor<T>);
    type IntoIter = btree_map::Iter<'a, String, Tensor<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(entries: &[(&str, Vec<usize>)]) -> ParamSet<f32> {
        entries.iter().map(|(n, s)| (n.to_string(), Tensor::zeros(s.clone()))).collect()
    }

    #[test]
    fn iteration_is_lexicographic() {
        let p = set(&[("b", vec![2]), ("a", vec![1]), ("c.0", vec![3])]);
        assert_eq!(p.names().collect::<Vec<_>>(), ["a", "b", "c.0"]);
    }

    #[test]
    fn compatibility_reports_first_mismatch() {
        let a = set(&[("a", vec![2, 2]), ("b", vec![3])]);
        let b = set(&[("a", vec![2, 3]), ("b", vec![4])]);
        match a.check_compatible(&b) {
            Err(Error::Incompatible { name, detail }) => {
                assert_eq!(name, "a");
                assert!(detail.contains("[2, 2]"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = set(&[("a", vec![2, 2])]);
        match a.check_compatible(&c) {
            Err(Error::Incompatible { name, .. }) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(a.check_compatible(&a.cast::<f64>()).is_ok());
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let s = Tensor::scalar(2.5f32);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.ndim(), 0);
    }
}
