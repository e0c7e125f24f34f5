use nalgebra::DMatrix;

use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// I.i.d. `N(0, stddev²)` entries.
pub fn init_gaussian(shape: &[usize], stddev: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(stddev > 0.0) || !stddev.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian init needs stddev > 0, got {stddev}"
        )));
    }
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = stddev * rng.normal();
    }
    Ok(t)
}

/// Random orthogonal `n × n` matrix: the Q factor of a Gaussian matrix, with
/// column signs flipped so that diag(R) is positive.
pub fn init_orthogonal(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::invalid(format!(
            "orthogonal init needs a square shape, got {shape:?}"
        )));
    }
    let n = shape[0];
    let g = init_gaussian(shape, 1.0, rng)?;
    let qr = DMatrix::from_row_slice(n, n, g.data()).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(q[(i, j)]);
        }
    }
    Tensor::matrix(n, n, data)
}
