use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::vocab::EOS;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// One (source, target, image) triple, id sequences terminated by EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub image_key: String,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        for (side, ids) in [("source", &self.src), ("target", &self.tgt)] {
            if ids.last() != Some(&EOS) {
                return Err(Error::data(format!("{side} sequence must end with EOS")));
            }
        }
        if self.image_key.is_empty() || self.image_key.contains(char::is_whitespace) {
            return Err(Error::data(format!("bad image key {:?}", self.image_key)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub split: Split,
    pub examples: Vec<Example>,
}

impl ParallelCorpus {
    pub fn new(split: Split, examples: Vec<Example>) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            ex.validate()
                .map_err(|e| Error::data(format!("{split} example {}: {e}", i + 1)))?;
        }
        Ok(ParallelCorpus { split, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Tab-separated lines: source ids, target ids, image key.
    pub fn to_text(&self) -> String {
        let join = |ids: &[usize]| {
            ids.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::new();
        for ex in &self.examples {
            s.push_str(&join(&ex.src));
            s.push('\t');
            s.push_str(&join(&ex.tgt));
            s.push('\t');
            s.push_str(&ex.image_key);
            s.push('\n');
        }
        s
    }

    pub fn parse(split: Split, text: &str, origin: &Path) -> Result<Self> {
        let ids = |field: &str, line: usize| -> Result<Vec<usize>> {
            field
                .split(' ')
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(origin, line, format!("bad token id {t:?}")))
                })
                .collect()
        };
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(origin, i + 1, "expected 3 tab-separated fields"));
            }
            examples.push(Example {
                src: ids(fields[0], i + 1)?,
                tgt: ids(fields[1], i + 1)?,
                image_key: fields[2].to_string(),
            });
        }
        ParallelCorpus::new(split, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_path(path)
    }

    pub fn load(split: Split, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        ParallelCorpus::parse(split, &text, path)
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_path(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Raw line-aligned source, target and image-key files.
#[derive(Clone, Debug)]
pub struct RawParallel {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub keys: Vec<String>,
}

impl RawParallel {
    pub fn read(src: &Path, tgt: &Path, keys: &Path) -> Result<Self> {
        let raw = RawParallel {
            src: read_lines(src)?,
            tgt: read_lines(tgt)?,
            keys: read_lines(keys)?.into_iter().map(|k| k.trim().to_string()).collect(),
        };
        if raw.src.len() != raw.tgt.len() || raw.src.len() != raw.keys.len() {
            return Err(Error::data(format!(
                "misaligned corpus: {} has {} lines, {} has {} lines, {} has {} lines",
                src.display(),
                raw.src.len(),
                tgt.display(),
                raw.tgt.len(),
                keys.display(),
                raw.keys.len()
            )));
        }
        Ok(raw)
    }
}
