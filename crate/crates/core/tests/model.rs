mod common;

use common::*;
use mnmt::model::ModelConfig;
use mnmt::tensor::finite_diff_check;

#[test]
fn full_model_gradient_with_frozen_masks() {
    let config = ModelConfig::uniform(12, 12, 8, Some(6));
    let (arch, mut reg) = toy_model(config, 5, 0.5);
    let batch = ToyBatch::new(3, 2, 12, 12, 4, 6);
    let plans = plans(&arch, 0.3, 9, 2);
    let pairs = batch.pairs(true);
    let rep = finite_diff_check(|reg| arch.batch_loss(reg, &pairs, &plans, true), &mut reg, 1e-4).unwrap();
    assert!(rep.max_relative_error < 1e-4, "{rep:?}");
}


mod oracle {
    //! Straight-line forward pass that reads parameters by name.
    use mnmt::tensor::ParamRegistry;

    pub struct Net<'a>(pub &'a ParamRegistry);

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    impl Net<'_> {
        fn t(&self, name: &str) -> &mnmt::tensor::Tensor {
            self.0.value(self.0.id(name).unwrap_or_else(|| panic!("no {name}")))
        }

        /// Rows `r0..r0+n` of `name` times `x`.
        fn mv(&self, name: &str, r0: usize, n: usize, x: &[f64]) -> Vec<f64> {
            let m = self.t(name);
            (r0..r0 + n)
                .map(|r| (0..m.cols()).map(|c| m.get2(r, c) * x[c]).sum())
                .collect()
        }

        fn vec(&self, name: &str) -> Vec<f64> {
            self.t(name).data().to_vec()
        }

        pub fn row(&self, name: &str, i: usize) -> Vec<f64> {
            self.t(name).row(i).to_vec()
        }

        pub fn gru(&self, prefix: &str, inputs: &[(&str, &[f64])], h: &[f64], bias: bool) -> Vec<f64> {
            let n = h.len();
            let gate = |k: usize| -> Vec<f64> {
                let mut acc = vec![0.0; n];
                for (name, x) in inputs {
                    let y = self.mv(&format!("{prefix}.{name}"), k * n, n, x);
                    (0..n).for_each(|j| acc[j] += y[j]);
                }
                if bias {
                    let b = self.vec(&format!("{prefix}.b"));
                    (0..n).for_each(|j| acc[j] += b[k * n + j]);
                }
                acc
            };
            let (xz, xr, xh) = (gate(0), gate(1), gate(2));
            let u = format!("{prefix}.U");
            let (uz, ur, uh) = (self.mv(&u, 0, n, h), self.mv(&u, n, n, h), self.mv(&u, 2 * n, n, h));
            (0..n)
                .map(|j| {
                    let z = sig(xz[j] + uz[j]);
                    let r = sig(xr[j] + ur[j]);
                    let cand = (xh[j] + r * uh[j]).tanh();
                    (1.0 - z) * cand + z * h[j]
                })
                .collect()
        }

        pub fn encode(&self, src: &[usize], hidden: usize) -> Vec<Vec<f64>> {
            let m = src.len();
            let mut fwd = vec![vec![0.0; hidden]];
            for &id in src {
                let x = self.row("emb.src", id);
                let h = self.gru("enc.fwd", &[("W", &x)], fwd.last().unwrap(), true);
                fwd.push(h);
            }
            let mut bwd = vec![vec![0.0; hidden]; m + 1];
            for t in (0..m).rev() {
                let x = self.row("emb.src", src[t]);
                bwd[t] = self.gru("enc.bwd", &[("W", &x)], &bwd[t + 1], true);
            }
            (0..m).map(|t| [fwd[t + 1].clone(), bwd[t].clone()].concat()).collect()
        }

        pub fn init(&self, h_m: &[f64]) -> Vec<f64> {
            let w1 = self.t("dec.init.W1");
            let b1 = self.vec("dec.init.b1");
            let hid: Vec<f64> = self
                .mv("dec.init.W1", 0, w1.rows(), h_m)
                .iter()
                .zip(&b1)
                .map(|(a, b)| (a + b).tanh())
                .collect();
            let w2 = self.t("dec.init.W2");
            let b2 = self.vec("dec.init.b2");
            self.mv("dec.init.W2", 0, w2.rows(), &hid)
                .iter()
                .zip(&b2)
                .map(|(a, b)| (a + b).tanh())
                .collect()
        }

        pub fn attend(&self, prefix: &str, ann: &[Vec<f64>], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
            let a = self.t(&format!("{prefix}.U")).rows();
            let q = self.mv(&format!("{prefix}.U"), 0, a, s);
            let v = self.vec(&format!("{prefix}.v"));
            let e: Vec<f64> = ann
                .iter()
                .map(|row| {
                    let k = self.mv(&format!("{prefix}.W"), 0, a, row);
                    (0..a).map(|j| v[j] * (q[j] + k[j]).tanh()).sum()
                })
                .collect();
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|x| (x - mx).exp()).sum();
            let alpha: Vec<f64> = e.iter().map(|x| (x - mx).exp() / z).collect();
            let mut ctx = vec![0.0; ann[0].len()];
            for (al, row) in alpha.iter().zip(ann) {
                for (c, x) in ctx.iter_mut().zip(row) {
                    *c += al * x;
                }
            }
            (ctx, alpha)
        }

        /// Returns `(logits, s_t)`.
        pub fn step(&self, ann: &[Vec<f64>], image: Option<&[Vec<f64>]>, s_prev: &[f64], y_prev: usize) -> (Vec<f64>, Vec<f64>) {
            let e = self.row("emb.tgt", y_prev);
            let sp = self.gru("dec.rec1", &[("W", &e)], s_prev, true);
            let (c, _) = self.attend("att.txt", ann, &sp);
            let i = image.map(|img| {
                let (raw, _) = self.attend("att.img", img, &sp);
                let w = self.vec("dec.gate.w");
                let beta = sig(w.iter().zip(&sp).map(|(a, b)| a * b).sum::<f64>() + self.vec("dec.gate.b")[0]);
                raw.iter().map(|x| beta * x).collect::<Vec<f64>>()
            });
            let s = match &i {
                Some(i) => self.gru("dec.rec2", &[("Wc", &c), ("Wi", i)], &sp, false),
                None => self.gru("dec.rec2", &[("Wc", &c)], &sp, false),
            };
            let o = self.t("dec.out.Ls").rows();
            let mut pre = self.mv("dec.out.Ls", 0, o, &s);
            let parts = [
                Some(self.mv("dec.out.Lc", 0, o, &c)),
                i.as_ref().map(|i| self.mv("dec.out.Li", 0, o, i)),
                Some(self.mv("dec.out.Lw", 0, o, &e)),
            ];
            for part in parts.into_iter().flatten() {
                (0..o).for_each(|j| pre[j] += part[j]);
            }
            let h: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
            let v = self.t("dec.out.Lo").rows();
            (self.mv("dec.out.Lo", 0, v, &h), s)
        }
    }
}

use mnmt::corpus::BOS;
use mnmt::model::{Architecture, SearchMode};
use mnmt::tensor::ParamRegistry;
use mnmt::training::dropout::{DropoutPlan, MaskTrace, Site};

fn image_rows(img: &mnmt::features::ImageAnnotations) -> Vec<Vec<f64>> {
    (0..img.positions()).map(|l| img.row(l).to_vec()).collect()
}

#[test]
fn decode_steps_match_straight_line_oracle() {
    for multimodal in [true, false] {
        let config = ModelConfig {
            src_vocab: 9,
            tgt_vocab: 7,
            src_emb: 3,
            tgt_emb: 4,
            enc_hidden: 5,
            dec_hidden: 6,
            att_dim: 3,
            init_hidden: 4,
            out_dim: 5,
            image_depth: multimodal.then_some(6),
        };
        let (arch, reg) = toy_model(config, 17, 0.6);
        let batch = ToyBatch::new(4, 1, 9, 7, 4, 6);
        let (src, img) = (&batch.sources[0], &batch.images[0]);
        let p = reg.values();
        let plan = DropoutPlan::identity();
        let prep = arch.prepare(p, src, multimodal.then_some(img), &plan).unwrap();

        let net = oracle::Net(&reg);
        let ann = net.encode(src, 5);
        let rows = image_rows(img);
        let s0 = net.init(ann.last().unwrap());
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff(&prep.s0, &s0) < 1e-12);

        let (mut s, mut s_ref) = (prep.s0.clone(), s0);
        for y_prev in [BOS, 5, 6] {
            let out = arch.decoder.step(p, &prep.input, &plan, &s, y_prev, None).unwrap();
            let (logits, next) = net.step(&ann, multimodal.then_some(&rows[..]), &s_ref, y_prev);
            assert!(diff(&out.logits, &logits) < 1e-10, "{:?} vs {:?}", out.logits, logits);
            s = out.state;
            s_ref = next;
        }
    }
}

#[test]
fn uniform_output_loss_is_log_vocab() {
    let (arch, mut reg) = toy_model(ModelConfig::uniform(12, 12, 8, Some(6)), 1, 0.5);
    let lo = reg.id("dec.out.Lo").unwrap();
    reg.value_mut(lo).fill(0.0);
    let batch = ToyBatch::new(1, 2, 12, 12, 4, 6);
    let loss = arch.batch_loss(&mut reg, &batch.pairs(true), &plans(&arch, 0.0, 0, 2), false).unwrap();
    assert!((loss - 12f64.ln()).abs() < 1e-12, "{loss}");
}

fn shared_text_only(mm: &ParamRegistry, config: &ModelConfig) -> (Architecture, ParamRegistry) {
    let (arch, mut reg) = toy_model(ModelConfig { image_depth: None, ..config.clone() }, 99, 0.5);
    for id in reg.ids().collect::<Vec<_>>() {
        let name = reg.name(id).to_string();
        *reg.value_mut(id) = mm.value(mm.id(&name).unwrap()).clone();
    }
    (arch, reg)
}

#[test]
fn zero_image_pathway_equals_text_only() {
    let config = ModelConfig::uniform(12, 10, 8, Some(6));
    let (arch, mut reg) = toy_model(config.clone(), 3, 0.5);
    for id in arch.image_params() {
        reg.value_mut(id).fill(0.0);
    }
    let (text, text_reg) = shared_text_only(&reg, &config);
    assert_eq!(text_reg.len() + arch.image_params().len(), reg.len());
    let batch = ToyBatch::new(8, 5, 12, 10, 4, 6);
    for (mm_pair, txt_pair) in batch.pairs(true).iter().zip(batch.pairs(false)) {
        let plan = DropoutPlan::identity();
        let a = arch.inspect(reg.values(), mm_pair, &plan, None).unwrap();
        let b = text.inspect(text_reg.values(), &txt_pair, &plan, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.distribution, y.distribution);
            assert_eq!(x.state, y.state);
        }
    }
}

#[test]
fn decoding_is_deterministic_and_masks_are_time_constant() {
    let config = ModelConfig::uniform(12, 12, 8, Some(6));
    let (arch, reg) = toy_model(config, 2, 0.5);
    let batch = ToyBatch::new(2, 1, 12, 12, 4, 6);
    let pair = batch.pairs(true)[0];
    let plan = plans(&arch, 0.3, 4, 1).remove(0);
    let mut trace = MaskTrace::default();
    let a = arch.inspect(reg.values(), &pair, &plan, Some(&mut trace)).unwrap();
    let b = arch.inspect(reg.values(), &pair, &plan, None).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(trace.steps.len(), pair.tgt.len());
    assert!(trace.steps[0].contains_key(&Site::Annotations));
    assert!(trace.steps[0].contains_key(&Site::Image));
    assert!(trace.is_time_constant());
}

#[test]
fn beam_matches_exhaustive_search_on_model() {
    use mnmt::corpus::EOS;
    for seed in 0..10 {
        let (arch, reg) = toy_model(ModelConfig::uniform(8, 3, 4, Some(3)), seed, 1.5);
        let model = mnmt::model::Model { arch, params: reg };
        let batch = ToyBatch::new(seed, 1, 8, 6, 2, 3);
        let (src, img) = (&batch.sources[0], &batch.images[0]);
        let got = model.translate(src, Some(img), SearchMode::Beam(9), 2).unwrap();

        let p = model.params.values();
        let plan = DropoutPlan::identity();
        let prep = model.arch.prepare(p, src, Some(img), &plan).unwrap();
        let logp = |s: &[f64], y: usize| {
            let out = model.arch.decoder.step(p, &prep.input, &plan, s, y, None).unwrap();
            let lp = mnmt::tensor::ops::log_softmax_slice(&out.logits);
            (lp, out.state)
        };
        let mut best: Option<(Vec<usize>, f64)> = None;
        let (lp0, s1) = logp(&prep.s0, BOS);
        let mut consider = |ids: Vec<usize>, total: f64| {
            let score = total / ids.len() as f64;
            if best.as_ref().map_or(true, |(b, bs)| score > *bs || (score == *bs && ids < *b)) {
                best = Some((ids, score));
            }
        };
        for a in 0..3 {
            if a == EOS {
                consider(vec![a], lp0[a]);
                continue;
            }
            let (lp1, _) = logp(&s1, a);
            for b in 0..3 {
                consider(vec![a, b], lp0[a] + lp1[b]);
            }
        }
        let (ids, score) = best.unwrap();
        let stripped: Vec<usize> = ids.iter().copied().filter(|&y| y != EOS).collect();
        assert_eq!(got.ids, stripped, "seed {seed}");
        assert!((got.score - score).abs() < 1e-12);
    }
}

#[test]
fn unit_beam_equals_greedy_on_model() {
    for seed in 0..20 {
        let (arch, reg) = toy_model(ModelConfig::uniform(10, 9, 6, Some(4)), seed, 0.8);
        let model = mnmt::model::Model { arch, params: reg };
        let batch = ToyBatch::new(seed + 50, 1, 10, 9, 3, 4);
        let img = Some(&batch.images[0]);
        let g = model.translate(&batch.sources[0], img, SearchMode::Greedy, 8).unwrap();
        let b = model.translate(&batch.sources[0], img, SearchMode::Beam(1), 8).unwrap();
        assert_eq!(g, b);
    }
}

#[test]
fn translate_rejects_bad_input() {
    let (arch, reg) = toy_model(ModelConfig::uniform(10, 9, 6, Some(4)), 1, 0.5);
    let model = mnmt::model::Model { arch, params: reg };
    let batch = ToyBatch::new(1, 1, 10, 9, 3, 4);
    assert!(model.translate(&[], Some(&batch.images[0]), SearchMode::Greedy, 5).is_err());
    assert!(model.translate(&batch.sources[0], None, SearchMode::Greedy, 5).is_err());
    assert!(model.translate(&batch.sources[0], Some(&batch.images[0]), SearchMode::Greedy, 0).is_err());
    let wrong = mnmt::features::synth_features(1, 3, 5, mnmt::features::FeatureStyle::Dense).unwrap();
    assert!(model.translate(&batch.sources[0], Some(&wrong), SearchMode::Greedy, 5).is_err());
}
