use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id map. Ids 0..4 are the reserved specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by `tokens` in the given order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::format(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("token id {id} out of range {}", self.len())))
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    /// Ids for `tokens` followed by EOS; unknown tokens map to UNK.
    pub fn encode_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids: Vec<usize> = tokens.iter().map(|t| self.id(t.as_ref())).collect();
        ids.push(EOS);
        ids
    }

    /// Tokens up to (not including) the first EOS.
    pub fn decode_ids(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .map(|&id| self.token(id).map(str::to_string))
            .collect()
    }

    /// One token per line for ids ≥ 4; specials are implicit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_path(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        Vocabulary::from_tokens(text.lines().map(str::to_string))
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Specials first, then tokens seen at least `min_count` times ordered by
/// descending frequency, ties broken by ascending token.
pub fn build_vocab<S: AsRef<str>>(sentences: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be >= 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sent in sentences {
        for t in sent {
            let t = t.as_ref();
            if !SPECIALS.contains(&t) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()))
}
