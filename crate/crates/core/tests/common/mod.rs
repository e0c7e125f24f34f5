#![allow(dead_code)]

use mnmt::features::{synth_features, FeatureStyle, ImageAnnotations};
use mnmt::model::{Architecture, ModelConfig, Pair};
use mnmt::tensor::{ParamRegistry, Rng};
use mnmt::training::dropout::{sample_dropout_plan, DropoutPlan};

pub const EOS: usize = mnmt::corpus::EOS;

/// A toy model with parameters drawn at `std`.
pub fn toy_model(config: ModelConfig, seed: u64, std: f64) -> (Architecture, ParamRegistry) {
    let mut rng = Rng::new(seed);
    let mut reg = ParamRegistry::with_init_std(std);
    let arch = Architecture::register(&mut reg, &mut rng, config).unwrap();
    (arch, reg)
}

/// Random id sequence over the non-special ids `4..vocab`, ending with EOS.
pub fn random_sentence(rng: &mut Rng, vocab: usize, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..len).map(|_| 4 + rng.below(vocab - 4)).collect();
    ids.push(EOS);
    ids
}

pub struct ToyBatch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub images: Vec<ImageAnnotations>,
}

impl ToyBatch {
    pub fn new(seed: u64, n: usize, src_vocab: usize, tgt_vocab: usize, positions: usize, depth: usize) -> Self {
        let mut rng = Rng::new(seed);
        let mut b = ToyBatch {
            sources: Vec::new(),
            targets: Vec::new(),
            images: Vec::new(),
        };
        for i in 0..n {
            let (ls, lt) = (2 + rng.below(3), 2 + rng.below(3));
            b.sources.push(random_sentence(&mut rng, src_vocab, ls));
            b.targets.push(random_sentence(&mut rng, tgt_vocab, lt));
            b.images
                .push(synth_features(seed * 1000 + i as u64, positions, depth, FeatureStyle::Dense).unwrap());
        }
        b
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

pub fn plans(arch: &Architecture, p: f64, seed: u64, n: usize) -> Vec<DropoutPlan> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| sample_dropout_plan(p, &mut rng, &arch.dropout_shapes()).unwrap())
        .collect()
}
