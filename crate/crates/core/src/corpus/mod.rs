//! Text normalization, subword segmentation, vocabularies and the encoded
//! parallel corpus.

pub mod bpe;
pub mod dataset;
pub mod tokenize;
pub mod vocab;

pub use bpe::{bpe_learn, join_subwords, BpeMerges, END_OF_WORD};
pub use dataset::{Example, ParallelCorpus, RawParallel, Split};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, UNK};

/// Tokenizer plus optional BPE, producing the units a vocabulary is built over.
#[derive(Clone, Debug, Default)]
pub struct Segmenter {
    pub merges: Option<BpeMerges>,
}

impl Segmenter {
    pub fn words() -> Self {
        Segmenter { merges: None }
    }

    pub fn with_bpe(merges: BpeMerges) -> Self {
        Segmenter {
            merges: Some(merges),
        }
    }

    pub fn segment(&self, text: &str) -> Vec<String> {
        self.segment_tokens(&tokenize(text))
    }

    pub fn segment_tokens(&self, tokens: &[String]) -> Vec<String> {
        match &self.merges {
            None => tokens.to_vec(),
            Some(m) => tokens.iter().flat_map(|t| m.apply(t)).collect(),
        }
    }

    /// Inverse of [`Segmenter::segment_tokens`] up to tokenization: word-level tokens.
    pub fn join(&self, units: &[String]) -> Vec<String> {
        match &self.merges {
            None => units.to_vec(),
            Some(_) => join_subwords(units),
        }
    }
}
