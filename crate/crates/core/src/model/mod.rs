//! The doubly-attentive translation model: bidirectional encoder, conditional
//! GRU decoder with text and image attention, loss and search.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod gru;
pub mod search;

use attention::MemoryGrads;
use decoder::{Decoder, DecoderDims, DecoderInput, InitCache, StepCache};
use encoder::{AnnotationSet, Encoder, EncoderCache};
use search::{beam, greedy, StepScorer};

use crate::corpus::BOS;
use crate::error::{Error, Result};
use crate::features::ImageAnnotations;
use crate::tensor::ops::{log_softmax_slice, softmax_slice};
use crate::tensor::params::ParamValues;
use crate::tensor::{ParamId, ParamRegistry, Rng, Tensor};
use crate::training::dropout::{DropoutPlan, MaskTrace, Site};

/// Model dimensions. `image_depth = None` builds the text-only baseline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub src_emb: usize,
    pub tgt_emb: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    pub init_hidden: usize,
    pub out_dim: usize,
    pub image_depth: Option<usize>,
}

impl ModelConfig {
    /// Every width set to `hidden`, the deep-output width to the target
    /// embedding width.
    pub fn uniform(src_vocab: usize, tgt_vocab: usize, hidden: usize, image_depth: Option<usize>) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            src_emb: hidden,
            tgt_emb: hidden,
            enc_hidden: hidden,
            dec_hidden: hidden,
            att_dim: hidden,
            init_hidden: hidden,
            out_dim: hidden,
            image_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("src_emb", self.src_emb),
            ("tgt_emb", self.tgt_emb),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("att_dim", self.att_dim),
            ("init_hidden", self.init_hidden),
            ("out_dim", self.out_dim),
            ("image_depth", self.image_depth.unwrap_or(1)),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn is_multimodal(&self) -> bool {
        self.image_depth.is_some()
    }
}

/// Parameter handles of a model, kept apart from the registry so loss
/// closures can borrow the registry mutably.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// One training pair with its image.
#[derive(Clone, Copy, Debug)]
pub struct Pair<'a> {
    pub src: &'a [usize],
    /// Target ids ending with EOS.
    pub tgt: &'a [usize],
    pub image: Option<&'a ImageAnnotations>,
}

/// Encoder output and decoder memories for one source sentence.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub annotations: AnnotationSet,
    pub input: DecoderInput,
    pub s0: Vec<f64>,
    enc_cache: EncoderCache,
    init_cache: InitCache,
}

/// Per-step values a decode exposes for inspection.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub distribution: Vec<f64>,
    pub state: Vec<f64>,
    pub text_alphas: Vec<f64>,
    pub image_alphas: Option<Vec<f64>>,
}

impl Architecture {
    pub fn register(reg: &mut ParamRegistry, rng: &mut Rng, config: ModelConfig) -> Result<Architecture> {
        config.validate()?;
        let encoder = Encoder::register(reg, rng, config.src_vocab, config.src_emb, config.enc_hidden)?;
        let dims = DecoderDims {
            vocab: config.tgt_vocab,
            emb: config.tgt_emb,
            state: config.dec_hidden,
            ctx: 2 * config.enc_hidden,
            image: config.image_depth,
            att: config.att_dim,
            init_hidden: config.init_hidden,
            out: config.out_dim,
        };
        let decoder = Decoder::register(reg, rng, &dims)?;
        Ok(Architecture {
            config,
            encoder,
            decoder,
        })
    }

    /// Widths of every dropout site this model uses.
    pub fn dropout_shapes(&self) -> Vec<(Site, usize)> {
        let c = &self.config;
        let ctx = 2 * c.enc_hidden;
        let mut shapes = vec![
            (Site::SrcEmb, c.src_emb),
            (Site::EncFwd, c.enc_hidden),
            (Site::EncBwd, c.enc_hidden),
            (Site::Annotations, ctx),
            (Site::TgtEmb, c.tgt_emb),
            (Site::CtxText, ctx),
            (Site::OutState, c.dec_hidden),
            (Site::OutCtxText, ctx),
            (Site::OutEmb, c.tgt_emb),
            (Site::OutHidden, c.out_dim),
        ];
        if let Some(d) = c.image_depth {
            shapes.extend([(Site::Image, d), (Site::CtxImage, d), (Site::OutCtxImage, d)]);
        }
        shapes
    }

    /// Every parameter on the image pathway.
    pub fn image_params(&self) -> Vec<ParamId> {
        self.decoder.image_params()
    }

    fn masked_rows(t: &Tensor, plan: &DropoutPlan, site: Site) -> Tensor {
        let mut out = t.clone();
        for l in 0..out.rows() {
            plan.apply_in_place(site, out.row_mut(l));
        }
        out
    }

    /// Encodes the source, builds both attention memories and `s_0`.
    pub fn prepare(
        &self,
        p: ParamValues<'_>,
        src: &[usize],
        image: Option<&ImageAnnotations>,
        plan: &DropoutPlan,
    ) -> Result<Prepared> {
        let (annotations, enc_cache) = self.encoder.encode(p, src, plan)?;
        let text_rows = Self::masked_rows(&annotations.annotations, plan, Site::Annotations);
        let text = self.decoder.att_text.memory(p, text_rows, annotations.mask.clone())?;
        let image = match (&self.decoder.image, image) {
            (Some(path), Some(img)) => {
                if Some(img.depth()) != self.config.image_depth {
                    return Err(Error::invalid(format!(
                        "image features of depth {}, model expects {}",
                        img.depth(),
                        self.config.image_depth.unwrap_or(0)
                    )));
                }
                let rows = Self::masked_rows(img.tensor(), plan, Site::Image);
                Some(path.att.memory(p, rows, vec![true; img.positions()])?)
            }
            (Some(_), None) => return Err(Error::invalid("multimodal model needs image features")),
            (None, _) => None,
        };
        let (s0, init_cache) = self.decoder.init_state(p, &annotations.h_final)?;
        Ok(Prepared {
            annotations,
            input: DecoderInput { text, image },
            s0,
            enc_cache,
            init_cache,
        })
    }

    /// Summed NLL of one pair. With `grad_scale = Some(k)` the gradient of
    /// `k · NLL` is accumulated into the registry.
    pub fn sequence_loss(
        &self,
        reg: &mut ParamRegistry,
        pair: &Pair<'_>,
        plan: &DropoutPlan,
        grad_scale: Option<f64>,
        mut trace: Option<&mut MaskTrace>,
    ) -> Result<f64> {
        if pair.tgt.is_empty() {
            return Err(Error::invalid("empty target sequence"));
        }
        let p = reg.values();
        let prep = self.prepare(p, pair.src, pair.image, plan)?;
        let mut s = prep.s0.clone();
        let mut nll = 0.0;
        let mut caches: Vec<(StepCache, Vec<f64>)> = Vec::with_capacity(pair.tgt.len());
        for (t, &y) in pair.tgt.iter().enumerate() {
            let prev = if t == 0 { BOS } else { pair.tgt[t - 1] };
            let out = self
                .decoder
                .step(p, &prep.input, plan, &s, prev, trace.as_deref_mut().map(|tr| (tr, t)))?;
            if y >= out.logits.len() {
                return Err(Error::invalid(format!("target id {y} outside vocabulary of {}", out.logits.len())));
            }
            let logp = log_softmax_slice(&out.logits);
            nll -= logp[y];
            if grad_scale.is_some() {
                caches.push((out.cache, logp));
            }
            s = out.state;
        }
        let Some(k) = grad_scale else {
            return Ok(nll);
        };

        let (p, mut g) = reg.split_mut();
        let mut text_acc = self.decoder.att_text.memory_grads(&prep.input.text);
        let mut image_acc: Option<MemoryGrads> = match (&self.decoder.image, &prep.input.image) {
            (Some(path), Some(mem)) => Some(path.att.memory_grads(mem)),
            _ => None,
        };
        let mut ds = vec![0.0; s.len()];
        for (t, (cache, logp)) in caches.iter().enumerate().rev() {
            let mut d_logits: Vec<f64> = logp.iter().map(|l| k * l.exp()).collect();
            d_logits[pair.tgt[t]] -= k;
            ds = self.decoder.step_backward(
                p,
                &mut g,
                &prep.input,
                plan,
                cache,
                &d_logits,
                &ds,
                &mut text_acc,
                image_acc.as_mut(),
            )?;
        }
        let dh_final = self.decoder.init_backward(p, &mut g, &prep.init_cache, &ds);
        let mut d_ann = self.decoder.att_text.memory_backward(p, &mut g, &prep.input.text, text_acc);
        for l in 0..d_ann.rows() {
            plan.apply_in_place(Site::Annotations, d_ann.row_mut(l));
        }
        let last = d_ann.rows() - 1;
        d_ann.row_mut(last).iter_mut().zip(&dh_final).for_each(|(a, b)| *a += b);
        if let (Some(path), Some(mem), Some(acc)) = (&self.decoder.image, &prep.input.image, image_acc) {
            path.att.memory_backward(p, &mut g, mem, acc);
        }
        self.encoder.backward(p, &mut g, &prep.enc_cache, plan, &d_ann);
        Ok(nll)
    }

    /// Mean per-token NLL over a batch, one dropout plan per pair. With
    /// `backprop` the gradient of that mean is accumulated.
    pub fn batch_loss(
        &self,
        reg: &mut ParamRegistry,
        batch: &[Pair<'_>],
        plans: &[DropoutPlan],
        backprop: bool,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if plans.len() != batch.len() {
            return Err(Error::invalid(format!("{} dropout plans for {} pairs", plans.len(), batch.len())));
        }
        let tokens: usize = batch.iter().map(|b| b.tgt.len()).sum();
        let k = 1.0 / tokens as f64;
        let mut total = 0.0;
        for (pair, plan) in batch.iter().zip(plans) {
            total += self.sequence_loss(reg, pair, plan, backprop.then_some(k), None)?;
        }
        Ok(total * k)
    }

    /// Teacher-forced decode returning every step's intermediates.
    pub fn inspect(
        &self,
        p: ParamValues<'_>,
        pair: &Pair<'_>,
        plan: &DropoutPlan,
        trace: Option<&mut MaskTrace>,
    ) -> Result<Vec<StepRecord>> {
        let mut trace = trace;
        let prep = self.prepare(p, pair.src, pair.image, plan)?;
        let mut s = prep.s0.clone();
        let mut records = Vec::with_capacity(pair.tgt.len());
        for t in 0..pair.tgt.len() {
            let prev = if t == 0 { BOS } else { pair.tgt[t - 1] };
            let out = self
                .decoder
                .step(p, &prep.input, plan, &s, prev, trace.as_deref_mut().map(|tr| (tr, t)))?;
            records.push(StepRecord {
                distribution: softmax_slice(&out.logits, None)?,
                state: out.state.clone(),
                text_alphas: out.text_alphas,
                image_alphas: out.image_alphas,
            });
            s = out.state;
        }
        Ok(records)
    }
}

/// How `translate` searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Output ids without the trailing EOS.
    pub ids: Vec<usize>,
    pub score: f64,
    /// Attention weights per emitted token.
    pub text_alphas: Vec<Vec<f64>>,
    pub image_alphas: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct DecodeState {
    s: Vec<f64>,
    text_alphas: Vec<f64>,
    image_alphas: Option<Vec<f64>>,
}

struct ModelScorer<'a> {
    arch: &'a Architecture,
    p: ParamValues<'a>,
    input: DecoderInput,
    s0: Vec<f64>,
    plan: DropoutPlan,
}

impl StepScorer for ModelScorer<'_> {
    type State = DecodeState;

    fn initial(&self) -> DecodeState {
        DecodeState {
            s: self.s0.clone(),
            text_alphas: Vec::new(),
            image_alphas: None,
        }
    }

    fn step(&self, state: &DecodeState, prev: usize) -> Result<(Vec<f64>, DecodeState)> {
        let out = self.arch.decoder.step(self.p, &self.input, &self.plan, &state.s, prev, None)?;
        let next = DecodeState {
            s: out.state,
            text_alphas: out.text_alphas,
            image_alphas: out.image_alphas,
        };
        Ok((log_softmax_slice(&out.logits), next))
    }
}

/// An architecture with its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParamRegistry,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, init_std: f64) -> Result<Model> {
        let mut rng = Rng::derive(seed, "model-init");
        let mut params = ParamRegistry::with_init_std(init_std);
        let arch = Architecture::register(&mut params, &mut rng, config)?;
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn translate(
        &self,
        src: &[usize],
        image: Option<&ImageAnnotations>,
        mode: SearchMode,
        max_len: usize,
    ) -> Result<Translation> {
        if src.is_empty() {
            return Err(Error::invalid("empty source sentence"));
        }
        let p = self.params.values();
        let plan = DropoutPlan::identity();
        let prep = self.arch.prepare(p, src, image, &plan)?;
        let scorer = ModelScorer {
            arch: &self.arch,
            p,
            input: prep.input,
            s0: prep.s0,
            plan,
        };
        let hyp = match mode {
            SearchMode::Greedy => greedy(&scorer, max_len)?,
            SearchMode::Beam(k) => beam(&scorer, k, max_len)?,
        };
        Ok(Translation {
            ids: hyp.tokens().to_vec(),
            score: hyp.score(),
            text_alphas: hyp.states.iter().map(|s| s.text_alphas.clone()).collect(),
            image_alphas: hyp.states.iter().filter_map(|s| s.image_alphas.clone()).collect(),
        })
    }
}
