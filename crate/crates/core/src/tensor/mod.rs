//! Dense row-major tensors, forward kernels and a define-by-run reverse-mode
//! autodiff graph.

mod graph;
mod gradcheck;
pub mod ops;

pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use graph::{Graph, NodeId, PROB_CLAMP};
pub use ops::{Binary, Unary};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

pub(crate) fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, checking extents and finiteness.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        if shape_len(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {} values, got {}",
                shape_len(shape),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    /// Internal constructor for kernels whose output is finite by construction
    /// or checked by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape_len(&shape), data.len());
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(value.is_finite());
        Self::from_parts(shape.to_vec(), vec![value; shape_len(shape)])
    }

    pub fn scalar(value: T) -> Self {
        Self::filled(&[1], value)
    }

    /// 2-D tensor from nested rows; used mostly in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable view of the values. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor of shape {:?}",
                delta.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, &d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) || shape_len(shape) != self.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Size of one entry along the leading axis.
    pub fn item_len(&self) -> usize {
        shape_len(&self.shape[1..])
    }

    /// Values of the `i`-th entry along the leading axis.
    pub fn item(&self, i: usize) -> &[T] {
        let stride = self.item_len();
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Gathers entries along the leading axis, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let stride = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::from_parts(shape, data)
    }

    /// Concatenates tensors along the leading axis; trailing extents must match.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut lead = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self::from_parts(shape, data))
    }

    /// Elementwise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        let data: Vec<T> = self.data.iter().map(|&v| f(v)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("map".into()));
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.len() as f64)
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length_and_finiteness() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[0, 2], vec![]).is_err());
        assert!(matches!(
            Tensor::<f32>::new(&[1], vec![f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.item_len(), 3);
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = Tensor::<f64>::zeros(&[3]).with_requires_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 3]);
    }

    #[test]
    fn select_and_concat_along_leading_axis() {
        let t = Tensor::<f64>::from_f64(&[3, 2], &[0., 1., 2., 3., 4., 5.]).unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[4., 5., 0., 1.]);
        let c = Tensor::concat(&[&t, &s]).unwrap();
        assert_eq!(c.shape(), &[5, 2]);
        assert!(Tensor::concat(&[&t, &Tensor::zeros(&[1, 3])]).is_err());
    }
}
