//! GRU transition shared by the encoder, REC1 and REC2.
//!
//! Gate blocks are stacked `[z; r; h]` along the rows of every matrix:
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! h̃ = tanh(W_h x + r ⊙ (U_h h) + b_h)
//! h' = (1 − z) ⊙ h̃ + z ⊙ h
//! ```
//!
//! A cell may read several inputs (`Σ_k W_k x_k`), which is how REC2 takes
//! the text and image contexts through separate matrices.

use crate::error::{Error, Result};
use crate::tensor::ops::{matvec_add, matvec_t_add, outer_add, sigmoid};
use crate::tensor::params::{Grads, ParamValues};
use crate::tensor::{InitScheme, ParamId, ParamRegistry, Rng, Tensor};

#[derive(Clone, Debug)]
pub struct Gru {
    pub inputs: Vec<ParamId>,
    pub u: ParamId,
    pub b: Option<ParamId>,
    pub hidden: usize,
}

/// Forward values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    xs: Vec<Vec<f64>>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rec_h: Vec<f64>,
}

impl Gru {
    /// Registers `{prefix}.{name}` input matrices, `{prefix}.U` and, when
    /// `bias` is set, `{prefix}.b`.
    pub fn register(
        reg: &mut ParamRegistry,
        rng: &mut Rng,
        prefix: &str,
        inputs: &[(&str, usize)],
        hidden: usize,
        bias: bool,
    ) -> Result<Gru> {
        let inputs = inputs
            .iter()
            .map(|(name, dim)| {
                reg.add(&format!("{prefix}.{name}"), &[3 * hidden, *dim], InitScheme::Gaussian, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let u = reg.add(&format!("{prefix}.U"), &[3 * hidden, hidden], InitScheme::Orthogonal, rng)?;
        let b = if bias {
            Some(reg.add(&format!("{prefix}.b"), &[3 * hidden], InitScheme::Zero, rng)?)
        } else {
            None
        };
        Ok(Gru { inputs, u, b, hidden })
    }

    pub fn forward(&self, p: ParamValues<'_>, xs: &[&[f64]], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
        let ws: Vec<&Tensor> = self.inputs.iter().map(|&id| &p[id]).collect();
        gru_forward(&ws, &p[self.u], self.b.map(|b| &p[b]), xs, h_prev)
    }

    /// Accumulates parameter gradients for one step given `dh = ∂L/∂h'`.
    /// Returns `∂L/∂h` and `∂L/∂x_k` for every input.
    pub fn backward(
        &self,
        p: ParamValues<'_>,
        g: &mut Grads<'_>,
        cache: &GruCache,
        dh: &[f64],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.hidden;
        let mut dh_prev = vec![0.0; n];
        let mut dpre = vec![0.0; 3 * n];
        let mut drec = vec![0.0; 3 * n];
        for j in 0..n {
            let (z, r, c) = (cache.z[j], cache.r[j], cache.cand[j]);
            let dcand = dh[j] * (1.0 - z);
            let dz = dh[j] * (cache.h_prev[j] - c);
            dh_prev[j] = dh[j] * z;
            let da_h = dcand * (1.0 - c * c);
            let dr = da_h * cache.rec_h[j];
            dpre[j] = dz * z * (1.0 - z);
            dpre[n + j] = dr * r * (1.0 - r);
            dpre[2 * n + j] = da_h;
            drec[j] = dpre[j];
            drec[n + j] = dpre[n + j];
            drec[2 * n + j] = da_h * r;
        }
        let mut dxs = Vec::with_capacity(self.inputs.len());
        for (&w, x) in self.inputs.iter().zip(&cache.xs) {
            outer_add(&mut g[w], &dpre, x);
            let mut dx = vec![0.0; x.len()];
            matvec_t_add(&p[w], &dpre, &mut dx);
            dxs.push(dx);
        }
        if let Some(b) = self.b {
            g[b].data_mut().iter_mut().zip(&dpre).for_each(|(a, d)| *a += d);
        }
        outer_add(&mut g[self.u], &drec, &cache.h_prev);
        matvec_t_add(&p[self.u], &drec, &mut dh_prev);
        (dh_prev, dxs)
    }
}

/// One GRU transition over plain tensors. Each `ws[k]` is `[3n × |xs[k]|]`,
/// `u` is `[3n × n]` and `b` is `[3n]`.
pub fn gru_forward(
    ws: &[&Tensor],
    u: &Tensor,
    b: Option<&Tensor>,
    xs: &[&[f64]],
    h_prev: &[f64],
) -> Result<(Vec<f64>, GruCache)> {
    let n = h_prev.len();
    if u.shape() != [3 * n, n] {
        return Err(Error::invalid(format!(
            "gru: recurrent matrix {:?} does not fit hidden size {n}",
            u.shape()
        )));
    }
    if ws.len() != xs.len() {
        return Err(Error::invalid(format!("gru: {} matrices for {} inputs", ws.len(), xs.len())));
    }
    let mut pre = vec![0.0; 3 * n];
    for (w, x) in ws.iter().zip(xs) {
        if w.shape() != [3 * n, x.len()] {
            return Err(Error::invalid(format!(
                "gru: input of length {} against matrix {:?}",
                x.len(),
                w.shape()
            )));
        }
        matvec_add(w, x, &mut pre);
    }
    if let Some(b) = b {
        if b.shape() != [3 * n] {
            return Err(Error::invalid(format!("gru: bias {:?} for hidden size {n}", b.shape())));
        }
        pre.iter_mut().zip(b.data()).for_each(|(p, b)| *p += b);
    }
    let mut rec = vec![0.0; 3 * n];
    matvec_add(u, h_prev, &mut rec);

    let mut h = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut cand = vec![0.0; n];
    for j in 0..n {
        z[j] = sigmoid(pre[j] + rec[j]);
        r[j] = sigmoid(pre[n + j] + rec[n + j]);
        cand[j] = (pre[2 * n + j] + r[j] * rec[2 * n + j]).tanh();
        h[j] = (1.0 - z[j]) * cand[j] + z[j] * h_prev[j];
    }
    let cache = GruCache {
        xs: xs.iter().map(|x| x.to_vec()).collect(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        cand,
        rec_h: rec[2 * n..].to_vec(),
    };
    Ok((h, cache))
}

/// Single-input GRU step.
pub fn gru_step(x: &[f64], h_prev: &[f64], w: &Tensor, u: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    Ok(gru_forward(&[w], u, Some(b), &[x], h_prev)?.0)
}
