//! Dense row-major tensors over `f64`.

use super::error::{DiffError, DiffResult};

/// A dense tensor with row-major storage.
///
/// The shape invariant `product(dims) == data.len()` is enforced by every
/// constructor; scalars are represented as one-element tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> DiffResult<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.iter().any(|&d| d == 0) {
            return Err(DiffError::ShapeData {
                dims,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    /// Builds an `n x m` matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> DiffResult<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for row in rows {
            if row.len() != m {
                return Err(DiffError::ShapeData {
                    dims: vec![n, m],
                    expected: m,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![n, m], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor (or 1 for rank-1).
    pub fn nrows(&self) -> usize {
        self.dims[0]
    }

    /// Columns of a rank-2 tensor; the full length for rank-1.
    pub fn ncols(&self) -> usize {
        match self.dims.len() {
            1 => self.dims[0],
            _ => self.dims[1],
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dims[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dims[1] + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.ncols();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, dims: Vec<usize>) -> DiffResult<Self> {
        let expected: usize = dims.iter().product();
        if expected != self.data.len() {
            return Err(DiffError::ShapeData {
                dims,
                expected,
                got: self.data.len(),
            });
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other`, which must have identical dims.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.at2(0, 2), 3.0);
        assert_eq!(t.at2(1, 0), 4.0);
        assert_eq!(t.row(1), &[4., 5., 6.]);
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(Tensor::from_rows(&[vec![1., 2.], vec![3.]]).is_err());
    }
}
