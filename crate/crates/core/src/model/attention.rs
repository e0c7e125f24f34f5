//! Soft attention `e_l = vᵀ tanh(U_a s' + W_a a_l)`, `α = softmax(e)`,
//! `context = Σ_l α_l a_l`, used for both the text and the image pathway.

use crate::error::{Error, Result};
use crate::tensor::ops::{dot, matvec_add, matvec_t_add, outer_add, softmax_slice};
use crate::tensor::params::{Grads, ParamValues};
use crate::tensor::{InitScheme, ParamId, ParamRegistry, Rng, Tensor};

#[derive(Clone, Debug)]
pub struct Attention {
    pub u: ParamId,
    pub w: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub context: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Annotations with their projections `W_a a_l`, computed once per sequence.
#[derive(Clone, Debug)]
pub struct AttentionMemory {
    annotations: Tensor,
    mask: Vec<bool>,
    keys: Tensor,
    generation: u64,
}

impl AttentionMemory {
    pub fn annotations(&self) -> &Tensor {
        &self.annotations
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.annotations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-step forward state needed by [`Attention::backward`].
#[derive(Clone, Debug)]
pub struct AttendCache {
    s_prime: Vec<f64>,
    hidden: Tensor,
    alphas: Vec<f64>,
    generation: u64,
}

/// Gradients w.r.t. a memory, summed over every step that read it.
#[derive(Clone, Debug)]
pub struct MemoryGrads {
    keys: Tensor,
    pub annotations: Tensor,
}

impl Attention {
    pub fn register(
        reg: &mut ParamRegistry,
        rng: &mut Rng,
        prefix: &str,
        s_dim: usize,
        a_dim: usize,
        att_dim: usize,
    ) -> Result<Attention> {
        Ok(Attention {
            u: reg.add(&format!("{prefix}.U"), &[att_dim, s_dim], InitScheme::Gaussian, rng)?,
            w: reg.add(&format!("{prefix}.W"), &[att_dim, a_dim], InitScheme::Gaussian, rng)?,
            v: reg.add(&format!("{prefix}.v"), &[att_dim], InitScheme::Gaussian, rng)?,
        })
    }

    pub fn memory(&self, p: ParamValues<'_>, annotations: Tensor, mask: Vec<bool>) -> Result<AttentionMemory> {
        let w = &p[self.w];
        if annotations.rank() != 2 || annotations.rows() == 0 || annotations.cols() != w.cols() {
            return Err(Error::invalid(format!(
                "attention: annotations {:?} against W_a {:?}",
                annotations.shape(),
                w.shape()
            )));
        }
        if mask.len() != annotations.rows() {
            return Err(Error::invalid(format!(
                "attention: mask of length {} for {} annotations",
                mask.len(),
                annotations.rows()
            )));
        }
        let mut keys = Tensor::zeros(&[annotations.rows(), w.rows()])?;
        for l in 0..annotations.rows() {
            if mask[l] {
                matvec_add(w, annotations.row(l), keys.row_mut(l));
            }
        }
        Ok(AttentionMemory {
            annotations,
            mask,
            keys,
            generation: p.generation(),
        })
    }

    pub fn forward(
        &self,
        p: ParamValues<'_>,
        mem: &AttentionMemory,
        s_prime: &[f64],
    ) -> Result<(AttentionResult, AttendCache)> {
        if mem.generation != p.generation() {
            return Err(Error::Internal("attention memory built from stale parameters".into()));
        }
        let u = &p[self.u];
        if u.cols() != s_prime.len() {
            return Err(Error::invalid(format!(
                "attention: state of length {} against U_a {:?}",
                s_prime.len(),
                u.shape()
            )));
        }
        let v = p[self.v].data();
        let mut query = vec![0.0; u.rows()];
        matvec_add(u, s_prime, &mut query);
        let n = mem.len();
        let mut hidden = Tensor::zeros(&[n, query.len()])?;
        let mut energies = vec![0.0; n];
        for l in 0..n {
            if !mem.mask[l] {
                continue;
            }
            let row = hidden.row_mut(l);
            for ((h, q), k) in row.iter_mut().zip(&query).zip(mem.keys.row(l)) {
                *h = (q + k).tanh();
            }
            energies[l] = dot(v, row);
        }
        let alphas = softmax_slice(&energies, Some(&mem.mask))?;
        let mut context = vec![0.0; mem.annotations.cols()];
        for l in 0..n {
            if alphas[l] != 0.0 {
                for (c, a) in context.iter_mut().zip(mem.annotations.row(l)) {
                    *c += alphas[l] * a;
                }
            }
        }
        let cache = AttendCache {
            s_prime: s_prime.to_vec(),
            hidden,
            alphas: alphas.clone(),
            generation: p.generation(),
        };
        Ok((AttentionResult { context, alphas }, cache))
    }

    pub fn memory_grads(&self, mem: &AttentionMemory) -> MemoryGrads {
        MemoryGrads {
            keys: Tensor::zeros(mem.keys.shape()).expect("valid shape"),
            annotations: Tensor::zeros(mem.annotations.shape()).expect("valid shape"),
        }
    }

    /// Backward through one step. Accumulates into the `U_a`, `v` gradients
    /// and `acc`; returns `∂L/∂s'`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: ParamValues<'_>,
        g: &mut Grads<'_>,
        mem: &AttentionMemory,
        cache: &AttendCache,
        grad_context: &[f64],
        grad_alphas: Option<&[f64]>,
        acc: &mut MemoryGrads,
    ) -> Result<Vec<f64>> {
        if cache.generation != p.generation() || mem.generation != p.generation() {
            return Err(Error::Internal("attention cache is stale".into()));
        }
        let n = mem.len();
        let alphas = &cache.alphas;
        let mut d_alpha = vec![0.0; n];
        for l in 0..n {
            if !mem.mask[l] {
                continue;
            }
            let a = mem.annotations.row(l);
            d_alpha[l] = dot(grad_context, a) + grad_alphas.map_or(0.0, |ga| ga[l]);
            for (d, gc) in acc.annotations.row_mut(l).iter_mut().zip(grad_context) {
                *d += alphas[l] * gc;
            }
        }
        let weighted: f64 = alphas.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let v = p[self.v].data();
        let mut d_query = vec![0.0; v.len()];
        for l in 0..n {
            if !mem.mask[l] {
                continue;
            }
            let de = alphas[l] * (d_alpha[l] - weighted);
            let hid = cache.hidden.row(l);
            for (gv, h) in g[self.v].data_mut().iter_mut().zip(hid) {
                *gv += de * h;
            }
            let dk = acc.keys.row_mut(l);
            for j in 0..v.len() {
                let dpre = de * v[j] * (1.0 - hid[j] * hid[j]);
                dk[j] += dpre;
                d_query[j] += dpre;
            }
        }
        outer_add(&mut g[self.u], &d_query, &cache.s_prime);
        let mut ds = vec![0.0; cache.s_prime.len()];
        matvec_t_add(&p[self.u], &d_query, &mut ds);
        Ok(ds)
    }

    /// Backward through `W_a a_l`; returns the total `∂L/∂a_l`.
    pub fn memory_backward(
        &self,
        p: ParamValues<'_>,
        g: &mut Grads<'_>,
        mem: &AttentionMemory,
        acc: MemoryGrads,
    ) -> Tensor {
        let mut d_ann = acc.annotations;
        for l in 0..mem.len() {
            if !mem.mask[l] {
                continue;
            }
            outer_add(&mut g[self.w], acc.keys.row(l), mem.annotations.row(l));
            matvec_t_add(&p[self.w], acc.keys.row(l), d_ann.row_mut(l));
        }
        d_ann
    }
}

/// Stand-alone attention over plain tensors: `u [A × S]`, `w [A × D]`,
/// `v [A]`, `annotations [L × D]`.
pub fn attend(
    annotations: &Tensor,
    mask: Option<&[bool]>,
    s_prime: &[f64],
    u: &Tensor,
    w: &Tensor,
    v: &Tensor,
) -> Result<AttentionResult> {
    let mut reg = ParamRegistry::new();
    let att = Attention {
        u: reg.insert("U", u.clone(), InitScheme::Gaussian)?,
        w: reg.insert("W", w.clone(), InitScheme::Gaussian)?,
        v: reg.insert("v", v.clone(), InitScheme::Gaussian)?,
    };
    if v.shape() != [u.rows()] || w.rows() != u.rows() {
        return Err(Error::invalid(format!(
            "attention: parameter shapes {:?}, {:?}, {:?} disagree",
            u.shape(),
            w.shape(),
            v.shape()
        )));
    }
    let mask = mask.map_or_else(|| vec![true; annotations.rows()], <[bool]>::to_vec);
    let mem = att.memory(reg.values(), annotations.clone(), mask)?;
    Ok(att.forward(reg.values(), &mem, s_prime)?.0)
}
