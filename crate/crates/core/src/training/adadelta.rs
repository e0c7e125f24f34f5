//! ADADELTA (Zeiler, 2012) with per-parameter running averages.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamRegistry, Tensor};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Adadelta {
    rho: f64,
    eps: f64,
    sq_grad: Vec<Tensor>,
    sq_delta: Vec<Tensor>,
}

impl Adadelta {
    pub fn new(reg: &ParamRegistry, rho: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) || !(eps > 0.0) {
            return Err(Error::invalid(format!("adadelta: need 0 ≤ rho < 1 and eps > 0, got {rho}, {eps}")));
        }
        let zeros = || {
            reg.ids()
                .map(|id| Tensor::zeros(reg.value(id).shape()))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Adadelta {
            rho,
            eps,
            sq_grad: zeros()?,
            sq_delta: zeros()?,
        })
    }

    /// `E[g²]` and `E[Δx²]` for one parameter.
    pub fn accumulators(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.sq_grad[id.index()], &self.sq_delta[id.index()])
    }

    /// Applies one update to every trainable parameter and zeroes all
    /// gradients. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, reg: &mut ParamRegistry) -> Result<()> {
        let ids: Vec<ParamId> = reg.ids().filter(|&id| !reg.is_frozen(id)).collect();
        if self.sq_grad.len() != reg.len() {
            return Err(Error::Internal("optimizer state does not match the registry".into()));
        }
        for &id in &ids {
            if let Some(i) = reg.grad(id).data().iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient in {} at entry {i}", reg.name(id))));
            }
        }
        let (rho, eps) = (self.rho, self.eps);
        for id in ids {
            let grad = reg.grad(id).data().to_vec();
            let sq_g = self.sq_grad[id.index()].data_mut();
            let sq_d = self.sq_delta[id.index()].data_mut();
            let value = reg.value_mut(id).data_mut();
            for (k, g) in grad.into_iter().enumerate() {
                sq_g[k] = rho * sq_g[k] + (1.0 - rho) * g * g;
                let dx = -((sq_d[k] + eps).sqrt() / (sq_g[k] + eps).sqrt()) * g;
                sq_d[k] = rho * sq_d[k] + (1.0 - rho) * dx * dx;
                value[k] += dx;
            }
        }
        reg.zero_grads();
        Ok(())
    }
}

/// Rescales all trainable gradients so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(reg: &mut ParamRegistry, max_norm: f64) -> f64 {
    let norm = reg.grad_norm();
    if norm > max_norm && norm.is_finite() {
        reg.scale_grads(max_norm / norm);
    }
    norm
}
