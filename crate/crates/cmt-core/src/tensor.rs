//! Dense row-major tensors.
//!
//! A [`Tensor`] is an immutable-by-convention value: the gradient graph and
//! the optimizer produce fresh tensors instead of mutating shared ones. The
//! invariant `shape.iter().product() == data.len()` holds for every
//! constructed tensor; dimension errors are reported by the consuming
//! operation together with both shapes.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Identity matrix, shape `[n, n]`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Sole element of a scalar tensor.
    pub fn item(&self) -> S {
        debug_assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Number of rows when interpreted as a 2-D matrix (`[rows, cols]`).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Row `i` of a 2-D tensor as a slice.
    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Little-endian `f64` byte image of the data, used by checkpoints and
    /// bit-exactness tests.
    pub fn to_f64_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for &v in &self.data {
            out.extend_from_slice(&v.into_f64().to_le_bytes());
        }
        out
    }
}

impl<S: Scalar> std::fmt::Display for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}[", self.shape)?;
        let show = self.data.len().min(8);
        for (i, v) in self.data[..show].iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > show {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains('6') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn eye_and_item() {
        let i = Tensor::<f64>::eye(3);
        assert_eq!(i.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(Tensor::scalar(2.5f32).item(), 2.5);
    }

    #[test]
    fn le_bytes_roundtrip() {
        let t = Tensor::<f64>::from_vec(&[2], vec![1.5, -0.25]).unwrap();
        let bytes = t.to_f64_le_bytes();
        assert_eq!(f64::from_le_bytes(bytes[0..8].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), -0.25);
    }
}
