//! Deterministic toy data: id-level triples for model checks and a small
//! raw parallel corpus with image features for end-to-end runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{Split, EOS};
use crate::error::{IoContext, Result};
use crate::features::{synth_features, FeatureStore, FeatureStyle, ImageAnnotations};
use crate::model::{Architecture, ModelConfig, Pair};
use crate::tensor::{finite_diff_check, GradCheckReport, ParamRegistry, Rng};
use crate::training::dropout::{sample_dropout_plan, DropoutPlan};

/// Ids 0..4 are the special tokens.
const FIRST_WORD: usize = 4;

/// Random id sequence over the ordinary ids `4..vocab`, ending with EOS.
pub fn random_sentence(rng: &mut Rng, vocab: usize, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..len).map(|_| FIRST_WORD + rng.below(vocab - FIRST_WORD)).collect();
    ids.push(EOS);
    ids
}

/// Id-level `(source, target, image)` triples.
#[derive(Clone, Debug)]
pub struct ToyTriples {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub images: Vec<ImageAnnotations>,
}

impl ToyTriples {
    /// `n` triples with 2 to `max_len` words per side. Vocabularies must
    /// contain at least one ordinary word.
    pub fn new(seed: u64, n: usize, vocab: (usize, usize), max_len: usize, positions: usize, depth: usize) -> Result<Self> {
        if vocab.0 <= FIRST_WORD || vocab.1 <= FIRST_WORD || max_len < 2 {
            return Err(crate::Error::invalid("toy data needs vocabularies above 4 and max_len >= 2"));
        }
        let mut rng = Rng::derive(seed, "toy-triples");
        let mut t = ToyTriples {
            sources: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            images: Vec::with_capacity(n),
        };
        for i in 0..n {
            let ls = 2 + rng.below(max_len - 1);
            let lt = 2 + rng.below(max_len - 1);
            t.sources.push(random_sentence(&mut rng, vocab.0, ls));
            t.targets.push(random_sentence(&mut rng, vocab.1, lt));
            t.images.push(synth_features(
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                positions,
                depth,
                FeatureStyle::Dense,
            )?);
        }
        Ok(t)
    }

    pub fn pairs(&self, with_images: bool) -> Vec<Pair<'_>> {
        (0..self.sources.len())
            .map(|i| Pair {
                src: &self.sources[i],
                tgt: &self.targets[i],
                image: with_images.then(|| &self.images[i]),
            })
            .collect()
    }
}

/// Finite-difference check of the full multimodal model on a toy batch:
/// hidden 8, vocabularies of 12, 4×6 image features, two sequences with
/// dropout 0.3 masks held fixed.
pub fn toy_gradient_check(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let config = ModelConfig::uniform(12, 12, 8, Some(6));
    let mut rng = Rng::derive(seed, "gradcheck-init");
    // Weights at std 0.5 keep gradients well above the difference noise floor.
    let mut reg = ParamRegistry::with_init_std(0.5);
    let arch = Architecture::register(&mut reg, &mut rng, config)?;
    let data = ToyTriples::new(seed, 2, (12, 12), 4, 4, 6)?;
    let mut mask_rng = Rng::derive(seed, "gradcheck-masks");
    let plans = (0..2)
        .map(|_| sample_dropout_plan(0.3, &mut mask_rng, &arch.dropout_shapes()))
        .collect::<Result<Vec<DropoutPlan>>>()?;
    let pairs = data.pairs(true);
    finite_diff_check(|reg| arch.batch_loss(reg, &pairs, &plans, true), &mut reg, eps)
}

const SRC_WORDS: [&str; 16] = [
    "a", "man", "woman", "dog", "cat", "child", "red", "blue", "big", "small", "runs", "sits", "jumps", "on", "grass",
    "ball",
];
const TGT_WORDS: [&str; 16] = [
    "ein", "mann", "frau", "hund", "katze", "kind", "rot", "blau", "groß", "klein", "läuft", "sitzt", "springt",
    "auf", "gras", "ball",
];

/// Shape of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub seed: u64,
    pub train: usize,
    /// Dev sentences are the first `dev` training sentences.
    pub dev: usize,
    pub test: usize,
    pub positions: usize,
    pub depth: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            train: 32,
            dev: 8,
            test: 8,
            positions: 4,
            depth: 6,
        }
    }
}

/// Raw lines per split plus the feature store.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub splits: Vec<(Split, Vec<(String, String, String)>)>,
    pub features: FeatureStore,
}

fn synth_line(rng: &mut Rng) -> (String, String) {
    let n = 2 + rng.below(4);
    let ids: Vec<usize> = (0..n).map(|_| rng.below(SRC_WORDS.len())).collect();
    let src: Vec<&str> = ids.iter().map(|&i| SRC_WORDS[i]).collect();
    let tgt: Vec<&str> = ids.iter().map(|&i| TGT_WORDS[i]).collect();
    let mut src = src.join(" ");
    if let Some(first) = src.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    (format!("{src}."), format!("{} .", tgt.join(" ")))
}

/// A word-for-word English–German toy corpus with one image per sentence.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    let mut rng = Rng::derive(spec.seed, "synth-corpus");
    let mut images = BTreeMap::new();
    let mut make = |prefix: &str, n: usize, rng: &mut Rng| -> Result<Vec<(String, String, String)>> {
        (0..n)
            .map(|i| {
                let (s, t) = synth_line(rng);
                let key = format!("{prefix}{i:04}");
                let seed = spec.seed.wrapping_mul(7919).wrapping_add(images.len() as u64);
                images.insert(key.clone(), synth_features(seed, spec.positions, spec.depth, FeatureStyle::Dense)?);
                Ok((s, t, key))
            })
            .collect()
    };
    let train = make("train", spec.train, &mut rng)?;
    let test = make("test", spec.test, &mut rng)?;
    let dev = train[..spec.dev.min(train.len())].to_vec();
    Ok(SynthCorpus {
        splits: vec![(Split::Train, train), (Split::Dev, dev), (Split::Test, test)],
        features: FeatureStore::from_images(images)?,
    })
}

impl SynthCorpus {
    /// Writes `{split}.src`, `{split}.tgt`, `{split}.keys` under `raw_dir`
    /// and the feature store under `features_dir`.
    pub fn write(&self, raw_dir: &Path, features_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(raw_dir).with_path(raw_dir)?;
        for (split, lines) in &self.splits {
            let mut files = [String::new(), String::new(), String::new()];
            for (s, t, k) in lines {
                let _ = writeln!(files[0], "{s}");
                let _ = writeln!(files[1], "{t}");
                let _ = writeln!(files[2], "{k}");
            }
            for (ext, text) in ["src", "tgt", "keys"].iter().zip(files) {
                let path = raw_dir.join(format!("{split}.{ext}"));
                std::fs::write(&path, text).with_path(&path)?;
            }
        }
        self.features.save(features_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_aligned() {
        let spec = SynthSpec::default();
        let (a, b) = (synth_corpus(&spec).unwrap(), synth_corpus(&spec).unwrap());
        assert_eq!(a.splits, b.splits);
        for (_, lines) in &a.splits {
            for (s, t, k) in lines {
                assert_eq!(s.split_whitespace().count() + 1, t.split_whitespace().count());
                assert!(a.features.contains(k));
            }
        }
        assert_eq!(a.splits[1].1[..], a.splits[0].1[..8]);
    }

    #[test]
    fn toy_triples_end_with_eos() {
        let t = ToyTriples::new(3, 5, (6, 7), 4, 2, 3).unwrap();
        assert!(t.sources.iter().chain(&t.targets).all(|s| s.last() == Some(&EOS) && s.len() >= 3));
        assert!(ToyTriples::new(3, 5, (4, 7), 4, 2, 3).is_err());
    }
}
