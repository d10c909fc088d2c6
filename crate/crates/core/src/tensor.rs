//! Dense row-major `f64` tensors.
//!
//! Deliberately small: the networks in this crate are MLPs over short
//! vectors, so a tensor is just a flat buffer plus its extents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                context: "Tensor::new",
                expected: shape,
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new data".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `out[b, o] = sum_i a[b, i] * w[o, i] + bias[o]` for a batch of rows.
pub(crate) fn affine_rows(a: &[f64], rows: usize, w: &Tensor, bias: &Tensor, out: &mut Vec<f64>) {
    let (n_out, n_in) = (w.shape[0], w.shape[1]);
    out.clear();
    out.resize(rows * n_out, 0.0);
    let wd = &w.data;
    for r in 0..rows {
        let x = &a[r * n_in..(r + 1) * n_in];
        let y = &mut out[r * n_out..(r + 1) * n_out];
        for (o, yo) in y.iter_mut().enumerate() {
            let wr = &wd[o * n_in..(o + 1) * n_in];
            let mut acc = bias.data[o];
            for (xi, wi) in x.iter().zip(wr) {
                acc += xi * wi;
            }
            *yo = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn affine_matches_hand_computation() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![0.5, -0.5]);
        let mut out = Vec::new();
        affine_rows(&[1.0, 1.0, 1.0, 2.0, 0.0, -1.0], 2, &w, &b, &mut out);
        assert_eq!(out, vec![6.5, -0.5, -0.5, -3.5]);
    }
}
