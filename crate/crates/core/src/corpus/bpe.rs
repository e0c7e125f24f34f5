//! Byte-pair-encoding subword segmentation.
//!
//! Words are split into characters, the last one carrying the end-of-word
//! marker `</w>`. Learning repeatedly merges the most frequent adjacent symbol
//! pair; ties go to the lexicographically smallest `(left, right)` pair.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const END_OF_WORD: &str = "</w>";
pub const MERGES_HEADER: &str = "#version: mnmt-bpe 1";

/// Learned merge operations in priority order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeMerges {
    pairs: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeMerges {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if ranks.insert(p.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate merge {} {}", p.0, p.1)));
            }
        }
        Ok(BpeMerges { pairs, ranks })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The first `n` merges.
    pub fn truncated(&self, n: usize) -> BpeMerges {
        BpeMerges::from_pairs(self.pairs[..n.min(self.pairs.len())].to_vec())
            .expect("prefix of a valid merge list")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MERGES_HEADER);
        s.push('\n');
        for (l, r) in &self.pairs {
            let _ = writeln!(s, "{l} {r}");
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == MERGES_HEADER => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("expected header `{MERGES_HEADER}`"),
                ))
            }
        }
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    pairs.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::parse(origin, i + 2, "expected `left right`")),
            }
        }
        BpeMerges::from_pairs(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_path(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        BpeMerges::parse(&text, path)
    }

    /// Segments one token into subwords.
    pub fn apply(&self, token: &str) -> Vec<String> {
        let mut symbols = initial_symbols(token);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.pairs[rank];
            symbols = merge_pair(&symbols, l, r);
        }
        symbols
    }
}

fn initial_symbols(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges from a tokenized corpus. Stops early once
/// no pair occurs at least twice.
pub fn bpe_learn<S: AsRef<str>>(sentences: &[Vec<S>], num_merges: usize) -> BpeMerges {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for sent in sentences {
        for tok in sent {
            *freq.entry(tok.as_ref()).or_insert(0) += 1;
        }
    }

    // Symbols are interned so the inner loops hash integers.
    let mut names: Vec<String> = Vec::new();
    let mut intern: HashMap<String, u32> = HashMap::new();
    let mut id_of = |s: String, names: &mut Vec<String>| -> u32 {
        *intern.entry(s).or_insert_with_key(|k| {
            names.push(k.clone());
            (names.len() - 1) as u32
        })
    };
    let mut words: Vec<(Vec<u32>, usize)> = freq
        .iter()
        .map(|(w, &f)| {
            let syms = initial_symbols(w)
                .into_iter()
                .map(|s| id_of(s, &mut names))
                .collect();
            (syms, f)
        })
        .collect();

    let mut pairs = Vec::new();
    while pairs.len() < num_merges {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += f;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let a = (&names[pa.0 as usize], &names[pa.1 as usize]);
                let b = (&names[pb.0 as usize], &names[pb.1 as usize]);
                b.cmp(&a)
            })
        });
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = format!("{}{}", names[l as usize], names[r as usize]);
        let m = id_of(merged, &mut names);
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(m);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        pairs.push((names[l as usize].clone(), names[r as usize].clone()));
    }
    BpeMerges::from_pairs(pairs).expect("a merged pair never reappears")
}

/// Joins subwords back into words, using the end-of-word marker as boundary.
pub fn join_subwords<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for s in subwords {
        let s = s.as_ref();
        if let Some(stem) = s.strip_suffix(END_OF_WORD) {
            cur.push_str(stem);
            words.push(std::mem::take(&mut cur));
        } else {
            cur.push_str(s);
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}
