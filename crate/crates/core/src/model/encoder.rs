//! Bidirectional GRU encoder producing the annotation set `C = (h_1 … h_M)`.

use super::gru::{Gru, GruCache};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::tensor::params::{Grads, ParamValues};
use crate::tensor::{InitScheme, ParamId, ParamRegistry, Rng, Tensor};
use crate::training::dropout::{DropoutPlan, Site};

#[derive(Clone, Debug)]
pub struct Encoder {
    pub emb: ParamId,
    pub fwd: Gru,
    pub bwd: Gru,
    pub hidden: usize,
}

/// Encoder output: `M × 2·hidden` annotations `[→h_t; ←h_t]`, with padded
/// positions zeroed and masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub annotations: Tensor,
    pub mask: Vec<bool>,
    /// Annotation at the last unmasked position.
    pub h_final: Vec<f64>,
}

impl AnnotationSet {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    fn last_live(&self) -> usize {
        self.mask.iter().rposition(|&m| m).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    ids: Vec<usize>,
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
}

impl Encoder {
    pub fn register(
        reg: &mut ParamRegistry,
        rng: &mut Rng,
        vocab: usize,
        emb_dim: usize,
        hidden: usize,
    ) -> Result<Encoder> {
        let emb = reg.add("emb.src", &[vocab, emb_dim], InitScheme::Gaussian, rng)?;
        let fwd = Gru::register(reg, rng, "enc.fwd", &[("W", emb_dim)], hidden, true)?;
        let bwd = Gru::register(reg, rng, "enc.bwd", &[("W", emb_dim)], hidden, true)?;
        Ok(Encoder { emb, fwd, bwd, hidden })
    }

    fn embed(&self, p: ParamValues<'_>, id: usize, plan: &DropoutPlan) -> Result<Vec<f64>> {
        let e = &p[self.emb];
        if id >= e.rows() {
            return Err(Error::invalid(format!("source id {id} outside vocabulary of {}", e.rows())));
        }
        Ok(plan.apply(Site::SrcEmb, e.row(id)))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        p: ParamValues<'_>,
        ids: &[usize],
        mask: &[bool],
        plan: &DropoutPlan,
    ) -> Result<(AnnotationSet, Vec<Option<GruCache>>, Vec<Option<GruCache>>)> {
        let (m, n) = (ids.len(), self.hidden);
        if m == 0 || !mask.iter().any(|&x| x) {
            return Err(Error::invalid("encoder: empty source sequence"));
        }
        let xs = ids
            .iter()
            .zip(mask)
            .map(|(&id, &live)| if live { self.embed(p, id, plan).map(Some) } else { Ok(None) })
            .collect::<Result<Vec<_>>>()?;
        let mut ann = Tensor::zeros(&[m, 2 * n])?;
        let mut fwd_caches = vec![None; m];
        let mut bwd_caches = vec![None; m];

        let mut h = vec![0.0; n];
        for t in 0..m {
            if let Some(x) = &xs[t] {
                let (next, cache) = self.fwd.forward(p, &[x], &h)?;
                h = next;
                fwd_caches[t] = Some(cache);
                ann.row_mut(t)[..n].copy_from_slice(&plan.apply(Site::EncFwd, &h));
            }
        }
        let mut h = vec![0.0; n];
        for t in (0..m).rev() {
            if let Some(x) = &xs[t] {
                let (next, cache) = self.bwd.forward(p, &[x], &h)?;
                h = next;
                bwd_caches[t] = Some(cache);
                ann.row_mut(t)[n..].copy_from_slice(&plan.apply(Site::EncBwd, &h));
            }
        }
        let mut set = AnnotationSet {
            annotations: ann,
            mask: mask.to_vec(),
            h_final: Vec::new(),
        };
        set.h_final = set.annotations.row(set.last_live()).to_vec();
        Ok((set, fwd_caches, bwd_caches))
    }

    pub fn encode(
        &self,
        p: ParamValues<'_>,
        ids: &[usize],
        plan: &DropoutPlan,
    ) -> Result<(AnnotationSet, EncoderCache)> {
        let (set, fwd, bwd) = self.run(p, ids, &vec![true; ids.len()], plan)?;
        let cache = EncoderCache {
            ids: ids.to_vec(),
            fwd: fwd.into_iter().map(|c| c.expect("unpadded")).collect(),
            bwd: bwd.into_iter().map(|c| c.expect("unpadded")).collect(),
        };
        Ok((set, cache))
    }

    /// Encodes sentences padded with PAD to the longest one; padded positions
    /// are masked, carry the recurrent state unchanged and get zero annotations.
    pub fn encode_batch(&self, p: ParamValues<'_>, batch: &[Vec<usize>]) -> Result<Vec<AnnotationSet>> {
        let width = batch.iter().map(Vec::len).max().unwrap_or(0);
        let plan = DropoutPlan::identity();
        batch
            .iter()
            .map(|ids| {
                let mut padded = ids.clone();
                padded.resize(width, PAD);
                let mask: Vec<bool> = (0..width).map(|t| t < ids.len()).collect();
                Ok(self.run(p, &padded, &mask, &plan)?.0)
            })
            .collect()
    }

    /// Backward from `∂L/∂C` (`M × 2·hidden`).
    pub fn backward(
        &self,
        p: ParamValues<'_>,
        g: &mut Grads<'_>,
        cache: &EncoderCache,
        plan: &DropoutPlan,
        d_ann: &Tensor,
    ) {
        let (m, n) = (cache.ids.len(), self.hidden);
        let mut dx = vec![vec![0.0; p[self.emb].cols()]; m];
        let mut carry = vec![0.0; n];
        for t in (0..m).rev() {
            let mut dh = plan.apply(Site::EncFwd, &d_ann.row(t)[..n]);
            dh.iter_mut().zip(&carry).for_each(|(a, c)| *a += c);
            let (prev, dxs) = self.fwd.backward(p, g, &cache.fwd[t], &dh);
            carry = prev;
            dx[t].iter_mut().zip(&dxs[0]).for_each(|(a, b)| *a += b);
        }
        let mut carry = vec![0.0; n];
        for t in 0..m {
            let mut dh = plan.apply(Site::EncBwd, &d_ann.row(t)[n..]);
            dh.iter_mut().zip(&carry).for_each(|(a, c)| *a += c);
            let (prev, dxs) = self.bwd.backward(p, g, &cache.bwd[t], &dh);
            carry = prev;
            dx[t].iter_mut().zip(&dxs[0]).for_each(|(a, b)| *a += b);
        }
        for (t, &id) in cache.ids.iter().enumerate() {
            let d = plan.apply(Site::SrcEmb, &dx[t]);
            g[self.emb].row_mut(id).iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
    }
}
