use super::Tensor;
use crate::error::{Error, Result};

/// Norms at or below this are treated as zero by [`l2_normalize`].
pub const L2_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = M x` for a matrix `M` of shape `[rows, x.len()]`.
pub fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    matvec_add(m, x, &mut y);
    y
}

/// `y += M x`.
pub fn matvec_add(m: &Tensor, x: &[f64], y: &mut [f64]) {
    let cols = m.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(m.rows(), y.len());
    for (yi, row) in y.iter_mut().zip(m.data().chunks_exact(cols)) {
        *yi += dot(row, x);
    }
}

/// `dx += Mᵀ dy`.
pub fn matvec_t_add(m: &Tensor, dy: &[f64], dx: &mut [f64]) {
    let cols = m.cols();
    debug_assert_eq!(cols, dx.len());
    debug_assert_eq!(m.rows(), dy.len());
    for (&g, row) in dy.iter().zip(m.data().chunks_exact(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
    }
}

/// `G += dy xᵀ`.
pub fn outer_add(g: &mut Tensor, dy: &[f64], x: &[f64]) {
    let cols = g.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(g.rows(), dy.len());
    for (&d, row) in dy.iter().zip(g.data_mut().chunks_exact_mut(cols)) {
        if d == 0.0 {
            continue;
        }
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += d * xv;
        }
    }
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Masked softmax over a slice. Masked entries come out exactly zero.
pub fn softmax_slice(v: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(Error::invalid(format!(
                "softmax: mask length {} != {}",
                m.len(),
                v.len()
            )));
        }
    }
    let max = (0..v.len())
        .filter(|&i| keep(i))
        .map(|i| v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("softmax: every position is masked"));
    }
    let mut out: Vec<f64> = (0..v.len())
        .map(|i| if keep(i) { (v[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// `log softmax` of an unmasked slice.
pub fn log_softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    v.iter().map(|x| x - lse).collect()
}

pub fn l2_normalize_slice(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > L2_EPS {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Softmax of a rank-1 tensor with optional boolean mask (`true` = keep).
pub fn softmax(v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(Error::invalid("softmax expects a rank-1 tensor"));
    }
    Tensor::vector(&softmax_slice(v.data(), mask)?)
}

/// Unit-norm copy of `v`; vectors with norm at or below [`L2_EPS`] are returned unchanged.
pub fn l2_normalize(v: &Tensor) -> Tensor {
    let mut out = v.clone();
    l2_normalize_slice(out.data_mut());
    out
}
