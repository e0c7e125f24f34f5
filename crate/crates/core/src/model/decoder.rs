//! Conditional GRU decoder with text and image attention, a gated image
//! context and a deep output layer.
//!
//! One step:
//!
//! ```text
//! s'  = GRU_rec1(E_Y[y_{t−1}], s_{t−1})
//! c   = f_att(C, s')              β = σ(w_βᵀ s' + b_β)
//! i   = β · f'_att(I, s')
//! s   = GRU_rec2([c, i], s')      (separate text and image matrices, no bias)
//! o   = L_o tanh(L_s s + L_c c + L_i i + L_w E_Y[y_{t−1}])
//! ```

use super::attention::{AttendCache, Attention, AttentionMemory, MemoryGrads};
use super::gru::{Gru, GruCache};
use crate::error::{Error, Result};
use crate::tensor::ops::{dot, matvec_add, matvec_t_add, outer_add, sigmoid, softmax_slice};
use crate::tensor::params::{Grads, ParamValues};
use crate::tensor::{InitScheme, ParamId, ParamRegistry, Rng};
use crate::training::dropout::{DropoutPlan, MaskTrace, Site};

#[derive(Clone, Debug)]
pub struct ImagePathway {
    pub att: Attention,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub emb: ParamId,
    pub init_w1: ParamId,
    pub init_b1: ParamId,
    pub init_w2: ParamId,
    pub init_b2: ParamId,
    pub rec1: Gru,
    pub att_text: Attention,
    pub image: Option<ImagePathway>,
    pub rec2: Gru,
    pub out_s: ParamId,
    pub out_c: ParamId,
    pub out_i: Option<ParamId>,
    pub out_w: ParamId,
    pub out_o: ParamId,
    pub s_dim: usize,
}

/// Dimensions the decoder is built with.
#[derive(Clone, Copy, Debug)]
pub struct DecoderDims {
    pub vocab: usize,
    pub emb: usize,
    pub state: usize,
    /// Width of the text annotations, `2 · encoder hidden`.
    pub ctx: usize,
    /// Image feature depth `D`, or `None` for a text-only decoder.
    pub image: Option<usize>,
    pub att: usize,
    pub init_hidden: usize,
    pub out: usize,
}

/// The memories a decoder step attends over.
#[derive(Clone, Debug)]
pub struct DecoderInput {
    pub text: AttentionMemory,
    pub image: Option<AttentionMemory>,
}

#[derive(Clone, Debug)]
pub struct InitCache {
    h_final: Vec<f64>,
    hidden: Vec<f64>,
    s0: Vec<f64>,
}

#[derive(Clone, Debug)]
struct ImageStep {
    cache: AttendCache,
    raw: Vec<f64>,
    beta: f64,
    gated: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepCache {
    y_prev: usize,
    rec1: GruCache,
    s_prime: Vec<f64>,
    text: AttendCache,
    image: Option<ImageStep>,
    rec2: GruCache,
    out_inputs: [Vec<f64>; 4],
    hidden: Vec<f64>,
    hidden_masked: Vec<f64>,
}

/// Everything one decode step produces.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub state: Vec<f64>,
    pub text_alphas: Vec<f64>,
    pub image_alphas: Option<Vec<f64>>,
    pub text_context: Vec<f64>,
    /// Image context before gating.
    pub image_context: Option<Vec<f64>>,
    /// Gate value `β`, when the decoder has an image pathway.
    pub beta: Option<f64>,
    pub cache: StepCache,
}

/// `β = σ(w_βᵀ s' + b_β)` and `i_t = β · i_raw`.
pub fn gate_image(i_raw: &[f64], s_prime: &[f64], w: &[f64], b: f64) -> Result<(Vec<f64>, f64)> {
    if w.len() != s_prime.len() {
        return Err(Error::invalid(format!(
            "gate: weight of length {} for state of length {}",
            w.len(),
            s_prime.len()
        )));
    }
    let beta = sigmoid(dot(w, s_prime) + b);
    Ok((i_raw.iter().map(|v| beta * v).collect(), beta))
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

impl Decoder {
    pub fn register(reg: &mut ParamRegistry, rng: &mut Rng, d: &DecoderDims) -> Result<Decoder> {
        use InitScheme::{Gaussian, Zero};
        let emb = reg.add("emb.tgt", &[d.vocab, d.emb], Gaussian, rng)?;
        let init_w1 = reg.add("dec.init.W1", &[d.init_hidden, d.ctx], Gaussian, rng)?;
        let init_b1 = reg.add("dec.init.b1", &[d.init_hidden], Zero, rng)?;
        let init_w2 = reg.add("dec.init.W2", &[d.state, d.init_hidden], Gaussian, rng)?;
        let init_b2 = reg.add("dec.init.b2", &[d.state], Zero, rng)?;
        let rec1 = Gru::register(reg, rng, "dec.rec1", &[("W", d.emb)], d.state, true)?;
        let att_text = Attention::register(reg, rng, "att.txt", d.state, d.ctx, d.att)?;
        let image = match d.image {
            Some(depth) => Some(ImagePathway {
                att: Attention::register(reg, rng, "att.img", d.state, depth, d.att)?,
                gate_w: reg.add("dec.gate.w", &[d.state], Gaussian, rng)?,
                gate_b: reg.add("dec.gate.b", &[1], Zero, rng)?,
            }),
            None => None,
        };
        let rec2_inputs: Vec<(&str, usize)> = match d.image {
            Some(depth) => vec![("Wc", d.ctx), ("Wi", depth)],
            None => vec![("Wc", d.ctx)],
        };
        let rec2 = Gru::register(reg, rng, "dec.rec2", &rec2_inputs, d.state, false)?;
        let out_s = reg.add("dec.out.Ls", &[d.out, d.state], Gaussian, rng)?;
        let out_c = reg.add("dec.out.Lc", &[d.out, d.ctx], Gaussian, rng)?;
        let out_i = match d.image {
            Some(depth) => Some(reg.add("dec.out.Li", &[d.out, depth], Gaussian, rng)?),
            None => None,
        };
        let out_w = reg.add("dec.out.Lw", &[d.out, d.emb], Gaussian, rng)?;
        let out_o = reg.add("dec.out.Lo", &[d.vocab, d.out], Gaussian, rng)?;
        Ok(Decoder {
            emb,
            init_w1,
            init_b1,
            init_w2,
            init_b2,
            rec1,
            att_text,
            image,
            rec2,
            out_s,
            out_c,
            out_i,
            out_w,
            out_o,
            s_dim: d.state,
        })
    }

    /// Every parameter that belongs to the image pathway.
    pub fn image_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(img) = &self.image {
            ids.extend([img.att.u, img.att.w, img.att.v, img.gate_w, img.gate_b]);
        }
        ids.extend(self.rec2.inputs.iter().skip(1));
        ids.extend(self.out_i);
        ids
    }

    /// `s_0 = tanh(W₂ tanh(W₁ h_M + b₁) + b₂)`.
    pub fn init_state(&self, p: ParamValues<'_>, h_final: &[f64]) -> Result<(Vec<f64>, InitCache)> {
        if h_final.len() != p[self.init_w1].cols() {
            return Err(Error::invalid(format!(
                "init: final annotation of length {}, expected {}",
                h_final.len(),
                p[self.init_w1].cols()
            )));
        }
        let mut hidden = p[self.init_b1].data().to_vec();
        matvec_add(&p[self.init_w1], h_final, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut s0 = p[self.init_b2].data().to_vec();
        matvec_add(&p[self.init_w2], &hidden, &mut s0);
        s0.iter_mut().for_each(|v| *v = v.tanh());
        let cache = InitCache {
            h_final: h_final.to_vec(),
            hidden,
            s0: s0.clone(),
        };
        Ok((s0, cache))
    }

    /// Returns `∂L/∂h_M`.
    pub fn init_backward(&self, p: ParamValues<'_>, g: &mut Grads<'_>, cache: &InitCache, ds0: &[f64]) -> Vec<f64> {
        let d2: Vec<f64> = ds0.iter().zip(&cache.s0).map(|(d, s)| d * (1.0 - s * s)).collect();
        outer_add(&mut g[self.init_w2], &d2, &cache.hidden);
        add_into(g[self.init_b2].data_mut(), &d2);
        let mut dh = vec![0.0; cache.hidden.len()];
        matvec_t_add(&p[self.init_w2], &d2, &mut dh);
        let d1: Vec<f64> = dh.iter().zip(&cache.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
        outer_add(&mut g[self.init_w1], &d1, &cache.h_final);
        add_into(g[self.init_b1].data_mut(), &d1);
        let mut dh_final = vec![0.0; cache.h_final.len()];
        matvec_t_add(&p[self.init_w1], &d1, &mut dh_final);
        dh_final
    }

    /// One decoder step from state `s_prev` after emitting `y_prev`.
    pub fn step(
        &self,
        p: ParamValues<'_>,
        input: &DecoderInput,
        plan: &DropoutPlan,
        s_prev: &[f64],
        y_prev: usize,
        mut trace: Option<(&mut MaskTrace, usize)>,
    ) -> Result<StepOutput> {
        let emb = &p[self.emb];
        if y_prev >= emb.rows() {
            return Err(Error::invalid(format!("target id {y_prev} outside vocabulary of {}", emb.rows())));
        }
        if s_prev.len() != self.s_dim {
            return Err(Error::invalid(format!("decoder state of length {}, expected {}", s_prev.len(), self.s_dim)));
        }
        let mut record = |site: Site| {
            if let Some((tr, t)) = trace.as_mut() {
                tr.record(*t, site, plan.mask(site));
            }
        };
        for site in [Site::Annotations, Site::TgtEmb, Site::CtxText, Site::OutState, Site::OutCtxText, Site::OutEmb, Site::OutHidden] {
            record(site);
        }
        if self.image.is_some() {
            for site in [Site::Image, Site::CtxImage, Site::OutCtxImage] {
                record(site);
            }
        }

        let e_raw = emb.row(y_prev);
        let e_in = plan.apply(Site::TgtEmb, e_raw);
        let (s_prime, rec1) = self.rec1.forward(p, &[&e_in], s_prev)?;
        let (text, text_cache) = self.att_text.forward(p, &input.text, &s_prime)?;
        let c = text.context;
        let image = match (&self.image, &input.image) {
            (Some(path), Some(mem)) => {
                let (res, cache) = path.att.forward(p, mem, &s_prime)?;
                let (gated, beta) = gate_image(&res.context, &s_prime, p[path.gate_w].data(), p[path.gate_b].data()[0])?;
                Some((
                    res.alphas,
                    ImageStep {
                        cache,
                        raw: res.context,
                        beta,
                        gated,
                    },
                ))
            }
            (None, _) => None,
            (Some(_), None) => return Err(Error::invalid("multimodal decoder needs image features")),
        };

        let c_in = plan.apply(Site::CtxText, &c);
        let (state, rec2) = match &image {
            Some((_, img)) => {
                let i_in = plan.apply(Site::CtxImage, &img.gated);
                self.rec2.forward(p, &[&c_in, &i_in], &s_prime)?
            }
            None => self.rec2.forward(p, &[&c_in], &s_prime)?,
        };

        let out_inputs = [
            plan.apply(Site::OutState, &state),
            plan.apply(Site::OutCtxText, &c),
            match &image {
                Some((_, img)) => plan.apply(Site::OutCtxImage, &img.gated),
                None => Vec::new(),
            },
            plan.apply(Site::OutEmb, e_raw),
        ];
        let (hidden, hidden_masked, logits) = self.readout(p, &out_inputs, plan);

        let (image_alphas, image_step) = match image {
            Some((a, s)) => (Some(a), Some(s)),
            None => (None, None),
        };
        Ok(StepOutput {
            logits,
            state: state.clone(),
            text_alphas: text.alphas,
            text_context: c.clone(),
            image_context: image_step.as_ref().map(|s| s.raw.clone()),
            beta: image_step.as_ref().map(|s| s.beta),
            image_alphas,
            cache: StepCache {
                y_prev,
                rec1,
                s_prime,
                text: text_cache,
                image: image_step,
                rec2,
                out_inputs,
                hidden,
                hidden_masked,
            },
        })
    }

    fn readout(&self, p: ParamValues<'_>, inputs: &[Vec<f64>; 4], plan: &DropoutPlan) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut pre = vec![0.0; p[self.out_s].rows()];
        matvec_add(&p[self.out_s], &inputs[0], &mut pre);
        matvec_add(&p[self.out_c], &inputs[1], &mut pre);
        if let Some(li) = self.out_i {
            matvec_add(&p[li], &inputs[2], &mut pre);
        }
        matvec_add(&p[self.out_w], &inputs[3], &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let hidden_masked = plan.apply(Site::OutHidden, &hidden);
        let mut logits = vec![0.0; p[self.out_o].rows()];
        matvec_add(&p[self.out_o], &hidden_masked, &mut logits);
        (hidden, hidden_masked, logits)
    }

    /// `L_o tanh(L_s s + L_c c + L_i i + L_w e)` without dropout; `i` is
    /// ignored by a text-only decoder.
    pub fn deep_output(&self, p: ParamValues<'_>, s: &[f64], c: &[f64], i: Option<&[f64]>, e: &[f64]) -> Result<Vec<f64>> {
        let checks = [(self.out_s, s.len()), (self.out_c, c.len()), (self.out_w, e.len())];
        for (id, n) in checks.into_iter().chain(self.out_i.map(|li| (li, i.map_or(0, <[f64]>::len)))) {
            if p[id].cols() != n {
                return Err(Error::invalid(format!("deep output: input of length {n} against {:?}", p[id].shape())));
            }
        }
        let inputs = [s.to_vec(), c.to_vec(), i.map(<[f64]>::to_vec).unwrap_or_default(), e.to_vec()];
        Ok(self.readout(p, &inputs, &DropoutPlan::identity()).2)
    }

    /// Next-token distribution `softmax(o_t)`.
    pub fn distribution(logits: &[f64]) -> Result<Vec<f64>> {
        softmax_slice(logits, None)
    }

    /// Backward through one step given `∂L/∂logits` and `∂L/∂s_t` from the
    /// following step. Returns `∂L/∂s_{t−1}`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        p: ParamValues<'_>,
        g: &mut Grads<'_>,
        input: &DecoderInput,
        plan: &DropoutPlan,
        cache: &StepCache,
        d_logits: &[f64],
        d_state: &[f64],
        text_acc: &mut MemoryGrads,
        image_acc: Option<&mut MemoryGrads>,
    ) -> Result<Vec<f64>> {
        outer_add(&mut g[self.out_o], d_logits, &cache.hidden_masked);
        let mut dh = vec![0.0; cache.hidden.len()];
        matvec_t_add(&p[self.out_o], d_logits, &mut dh);
        plan.apply_in_place(Site::OutHidden, &mut dh);
        let dpre: Vec<f64> = dh.iter().zip(&cache.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();

        let back = |g: &mut Grads<'_>, id: ParamId, x: &[f64], site: Site| -> Vec<f64> {
            outer_add(&mut g[id], &dpre, x);
            let mut dx = vec![0.0; x.len()];
            matvec_t_add(&p[id], &dpre, &mut dx);
            plan.apply_in_place(site, &mut dx);
            dx
        };
        let mut ds = back(g, self.out_s, &cache.out_inputs[0], Site::OutState);
        add_into(&mut ds, d_state);
        let mut dc = back(g, self.out_c, &cache.out_inputs[1], Site::OutCtxText);
        let mut di = self
            .out_i
            .map(|li| back(g, li, &cache.out_inputs[2], Site::OutCtxImage));
        let mut de_raw = back(g, self.out_w, &cache.out_inputs[3], Site::OutEmb);

        let (mut ds_prime, dxs) = self.rec2.backward(p, g, &cache.rec2, &ds);
        add_into(&mut dc, &plan.apply(Site::CtxText, &dxs[0]));
        if let (Some(di), Some(dx)) = (di.as_mut(), dxs.get(1)) {
            add_into(di, &plan.apply(Site::CtxImage, dx));
        }

        if let (Some(path), Some(img), Some(di), Some(mem), Some(acc)) =
            (&self.image, &cache.image, di, &input.image, image_acc)
        {
            let d_raw: Vec<f64> = di.iter().map(|d| img.beta * d).collect();
            let d_beta = dot(&di, &img.raw);
            let d_act = d_beta * img.beta * (1.0 - img.beta);
            add_into(g[path.gate_w].data_mut(), &cache.s_prime.iter().map(|s| d_act * s).collect::<Vec<_>>());
            g[path.gate_b].data_mut()[0] += d_act;
            add_into(&mut ds_prime, &p[path.gate_w].data().iter().map(|w| d_act * w).collect::<Vec<_>>());
            let d = path.att.backward(p, g, mem, &img.cache, &d_raw, None, acc)?;
            add_into(&mut ds_prime, &d);
        }
        let d = self.att_text.backward(p, g, &input.text, &cache.text, &dc, None, text_acc)?;
        add_into(&mut ds_prime, &d);

        let (ds_prev, dxs) = self.rec1.backward(p, g, &cache.rec1, &ds_prime);
        add_into(&mut de_raw, &plan.apply(Site::TgtEmb, &dxs[0]));
        add_into(g[self.emb].row_mut(cache.y_prev), &de_raw);
        Ok(ds_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Tensor};

    #[test]
    fn gate_closed_forms() {
        let (i, beta) = gate_image(&[2.0, -4.0], &[0.3, 0.1], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(beta, 0.5);
        assert_eq!(i, vec![1.0, -2.0]);
        let (i, _) = gate_image(&[2.0, -4.0], &[0.3, 0.1], &[0.0, 0.0], -50.0).unwrap();
        assert!(i.iter().all(|v| v.abs() < 1e-15));
        assert!(gate_image(&[1.0], &[0.3], &[0.0, 0.0], 0.0).is_err());
    }

    fn tiny(image: Option<usize>, std: f64) -> (ParamRegistry, Decoder) {
        let mut reg = ParamRegistry::with_init_std(std);
        let dims = DecoderDims {
            vocab: 2,
            emb: 1,
            state: 2,
            ctx: 2,
            image,
            att: 1,
            init_hidden: 2,
            out: 1,
        };
        let dec = Decoder::register(&mut reg, &mut Rng::new(4), &dims).unwrap();
        (reg, dec)
    }

    #[test]
    fn init_state_closed_forms() {
        let (mut reg, dec) = tiny(None, 0.1);
        for id in [dec.init_w1, dec.init_w2] {
            reg.value_mut(id).fill(0.0);
        }
        assert_eq!(dec.init_state(reg.values(), &[0.7, -0.2]).unwrap().0, vec![0.0, 0.0]);

        *reg.value_mut(dec.init_w1) = Tensor::matrix(2, 2, vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        *reg.value_mut(dec.init_b1) = Tensor::vector(&[0.1, 0.0]).unwrap();
        *reg.value_mut(dec.init_w2) = Tensor::matrix(2, 2, vec![1.0, 1.0, -2.0, 0.5]).unwrap();
        *reg.value_mut(dec.init_b2) = Tensor::vector(&[0.0, 0.3]).unwrap();
        let h = [0.4, -0.3];
        let a = (0.5f64 * 0.4 + 0.3 + 0.1).tanh();
        let b = (0.25f64 * 0.4 - 0.6).tanh();
        let want = [(a + b).tanh(), (-2.0 * a + 0.5 * b + 0.3).tanh()];
        let got = dec.init_state(reg.values(), &h).unwrap().0;
        assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        assert!(dec.init_state(reg.values(), &[1.0]).is_err());
    }

    #[test]
    fn init_gradient_matches_finite_differences() {
        let (mut reg, dec) = tiny(None, 0.7);
        let h = [0.4, -0.3];
        let rep = finite_diff_check(
            |reg| {
                let (s0, cache) = dec.init_state(reg.values(), &h)?;
                let coef = [1.5, -0.5];
                let (p, mut g) = reg.split_mut();
                dec.init_backward(p, &mut g, &cache, &coef);
                Ok(s0[0] * coef[0] + s0[1] * coef[1])
            },
            &mut reg,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn deep_output_hand_evaluation() {
        let (mut reg, dec) = tiny(Some(1), 0.1);
        for id in [dec.out_s, dec.out_c, dec.out_i.unwrap(), dec.out_w, dec.out_o] {
            reg.value_mut(id).fill(0.0);
        }
        let logits = dec.deep_output(reg.values(), &[0.3, 0.1], &[1.0, 2.0], Some(&[0.5]), &[0.2]).unwrap();
        let probs = Decoder::distribution(&logits).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);

        *reg.value_mut(dec.out_s) = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        *reg.value_mut(dec.out_c) = Tensor::matrix(1, 2, vec![0.5, 0.0]).unwrap();
        *reg.value_mut(dec.out_i.unwrap()) = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        *reg.value_mut(dec.out_w) = Tensor::matrix(1, 1, vec![-1.0]).unwrap();
        *reg.value_mut(dec.out_o) = Tensor::matrix(2, 1, vec![1.0, -3.0]).unwrap();
        let logits = dec.deep_output(reg.values(), &[0.3, 0.1], &[1.0, 2.0], Some(&[0.5]), &[0.2]).unwrap();
        let h = (0.3f64 - 0.1 + 0.5 + 1.0 - 0.2).tanh();
        assert!((logits[0] - h).abs() < 1e-15 && (logits[1] + 3.0 * h).abs() < 1e-15);
        let probs = Decoder::distribution(&logits).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dec.deep_output(reg.values(), &[0.3], &[1.0, 2.0], Some(&[0.5]), &[0.2]).is_err());
    }

    #[test]
    fn rec2_zero_parameters_halve_the_proposal() {
        let (mut reg, dec) = tiny(Some(3), 0.1);
        for id in dec.rec2.inputs.iter().copied().chain([dec.rec2.u]) {
            reg.value_mut(id).fill(0.0);
        }
        let (s, _) = dec.rec2.forward(reg.values(), &[&[0.3, -0.9], &[1.0, 2.0, 3.0]], &[0.8, -0.6]).unwrap();
        assert_eq!(s, vec![0.4, -0.3]);
    }

    #[test]
    fn gate_gradient_matches_finite_differences() {
        let mut reg = ParamRegistry::new();
        let w = reg.insert("w", Tensor::vector(&[0.3, -0.8]).unwrap(), InitScheme::Gaussian).unwrap();
        let b = reg.insert("b", Tensor::vector(&[0.2]).unwrap(), InitScheme::Zero).unwrap();
        let (raw, sp) = ([1.0, -2.0, 0.5], [0.6, 0.25]);
        let coef = [0.7, 0.1, -1.3];
        let rep = finite_diff_check(
            |reg| {
                let (i, beta) = gate_image(&raw, &sp, reg.value(w).data(), reg.value(b).data()[0])?;
                let di = dot(&coef, &raw) * beta * (1.0 - beta);
                for (g, s) in reg.grad_mut(w).data_mut().iter_mut().zip(&sp) {
                    *g += di * s;
                }
                reg.grad_mut(b).data_mut()[0] += di;
                Ok(dot(&coef, &i))
            },
            &mut reg,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }
}
