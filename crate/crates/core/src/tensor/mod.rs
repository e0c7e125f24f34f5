//! Dense `f64` tensors and the numeric plumbing shared by every model component.
//!
//! Hot loops in the model operate on `&[f64]` slices through the helpers in
//! [`ops`]; [`Tensor`] is the owned carrier with shape checks at its public
//! boundary.

pub mod gradcheck;
pub mod init;
pub mod io;
pub mod ops;
pub mod params;
pub mod rng;

use std::fmt;

use crate::error::{Error, Result};

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use init::{init_gaussian, init_orthogonal};
pub use ops::{l2_normalize, softmax};
pub use params::{InitScheme, ParamId, ParamRegistry};
pub use rng::Rng;

/// Row-major dense array of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor shape must have rank >= 1"));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    /// Rank-1 tensor over a non-empty slice.
    pub fn vector(values: &[f64]) -> Result<Self> {
        Tensor::from_vec(&[values.len()], values.to_vec())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(&[rows, cols], data)
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("rows have unequal lengths"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::from_vec(&[rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Tensor::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Rows of a matrix. Panics on tensors that are not rank 2.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() on rank-{} tensor", self.rank());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() on rank-{} tensor", self.rank());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds a rank-1 `row` to every row of a matrix; the only broadcast supported.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || row.rank() != 1 || row.len() != self.cols() {
            return Err(Error::invalid(format!(
                "row broadcast: {:?} + {:?}",
                self.shape, row.shape
            )));
        }
        let mut out = self.clone();
        for i in 0..out.rows() {
            for (v, r) in out.row_mut(i).iter_mut().zip(&row.data) {
                *v += r;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid("transpose needs a matrix"));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, data)
    }

    /// Matrix product. A rank-1 right operand is treated as a column vector and
    /// the result is rank 1.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid("matmul: left operand must be a matrix"));
        }
        let (r, k) = (self.rows(), self.cols());
        match other.rank() {
            1 => {
                if other.len() != k {
                    return Err(Error::invalid(format!(
                        "matmul: {:?} x {:?}",
                        self.shape, other.shape
                    )));
                }
                Tensor::from_vec(&[r], ops::matvec(self, &other.data))
            }
            2 => {
                if other.rows() != k {
                    return Err(Error::invalid(format!(
                        "matmul: {:?} x {:?}",
                        self.shape, other.shape
                    )));
                }
                let c = other.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for p in 0..k {
                        let a = self.data[i * k + p];
                        for j in 0..c {
                            data[i * c + j] += a * other.data[p * c + j];
                        }
                    }
                }
                Tensor::matrix(r, c, data)
            }
            _ => Err(Error::invalid("matmul: right operand must be rank 1 or 2")),
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(ops::dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        ops::dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}
