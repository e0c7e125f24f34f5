//! Run configuration as a UTF-8 `key = value` file with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embeddings::EmbeddingSource;
use crate::error::{Error, IoContext, Result};
use crate::features::FeatureNorm;
use crate::model::ModelConfig;
use crate::training::trainer::TrainConfig;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are an error.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, i + 1, format!("expected `key = value`, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty key"));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::parse(origin, i + 1, format!("duplicate key {k:?}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn format_key_values(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// Full experiment configuration. Vocabulary sizes and the feature depth
/// come from the data, not from here.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub bpe_merges: usize,
    pub min_count: usize,
    /// Segment the source side with its own BPE merges as well.
    pub src_bpe: bool,
    pub src_emb: usize,
    pub tgt_emb: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    pub init_hidden: usize,
    pub out_dim: usize,
    pub init_std: f64,
    pub multimodal: bool,
    pub feature_norm: FeatureNorm,
    pub embeddings: EmbeddingSource,
    pub freeze_embeddings: bool,
    /// Pretrained source embedding matrix written by `embed` or a word
    /// vector file, for the `glove` and `multimodal` modes.
    pub embedding_file: Option<PathBuf>,
    pub batch_size: usize,
    pub dropout: f64,
    pub dropout_seed: Option<u64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub rho: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub max_len: usize,
    pub beam: usize,
    pub log_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 1,
            bpe_merges: 10_000,
            min_count: 1,
            src_bpe: false,
            src_emb: 620,
            tgt_emb: 620,
            enc_hidden: 1024,
            dec_hidden: 1024,
            att_dim: 1024,
            init_hidden: 1024,
            out_dim: 620,
            init_std: 0.01,
            multimodal: true,
            feature_norm: FeatureNorm::Row,
            embeddings: EmbeddingSource::Along,
            freeze_embeddings: false,
            embedding_file: None,
            batch_size: t.batch_size,
            dropout: t.dropout,
            dropout_seed: None,
            patience: t.patience,
            max_epochs: t.max_epochs,
            rho: t.rho,
            eps: t.eps,
            clip_norm: t.clip_norm,
            max_len: t.max_len,
            beam: 12,
            log_timing: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

fn none_or<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "bpe_merges" => self.bpe_merges = parse_value(key, v)?,
            "min_count" => self.min_count = parse_value(key, v)?,
            "src_bpe" => self.src_bpe = parse_bool(key, v)?,
            "src_emb" => self.src_emb = parse_value(key, v)?,
            "tgt_emb" => self.tgt_emb = parse_value(key, v)?,
            "enc_hidden" => self.enc_hidden = parse_value(key, v)?,
            "dec_hidden" => self.dec_hidden = parse_value(key, v)?,
            "att_dim" => self.att_dim = parse_value(key, v)?,
            "init_hidden" => self.init_hidden = parse_value(key, v)?,
            "out_dim" => self.out_dim = parse_value(key, v)?,
            "init_std" => self.init_std = parse_value(key, v)?,
            "multimodal" => self.multimodal = parse_bool(key, v)?,
            "feature_norm" => self.feature_norm = v.parse()?,
            "embeddings" => self.embeddings = v.parse()?,
            "freeze_embeddings" => self.freeze_embeddings = parse_bool(key, v)?,
            "embedding_file" => self.embedding_file = none_or(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "dropout_seed" => self.dropout_seed = none_or(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "max_epochs" => self.max_epochs = parse_value(key, v)?,
            "rho" => self.rho = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "clip_norm" => self.clip_norm = none_or(key, v)?,
            "max_len" => self.max_len = parse_value(key, v)?,
            "beam" => self.beam = parse_value(key, v)?,
            "log_timing" => self.log_timing = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value; floats use round-trip formatting.
    pub fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("seed", self.seed.to_string()),
            e("bpe_merges", self.bpe_merges.to_string()),
            e("min_count", self.min_count.to_string()),
            e("src_bpe", self.src_bpe.to_string()),
            e("src_emb", self.src_emb.to_string()),
            e("tgt_emb", self.tgt_emb.to_string()),
            e("enc_hidden", self.enc_hidden.to_string()),
            e("dec_hidden", self.dec_hidden.to_string()),
            e("att_dim", self.att_dim.to_string()),
            e("init_hidden", self.init_hidden.to_string()),
            e("out_dim", self.out_dim.to_string()),
            e("init_std", format!("{:?}", self.init_std)),
            e("multimodal", self.multimodal.to_string()),
            e("feature_norm", self.feature_norm.as_str().to_string()),
            e("embeddings", self.embeddings.as_str().to_string()),
            e("freeze_embeddings", self.freeze_embeddings.to_string()),
            e("embedding_file", show(&self.embedding_file.as_ref().map(|p| p.display()))),
            e("batch_size", self.batch_size.to_string()),
            e("dropout", format!("{:?}", self.dropout)),
            e("dropout_seed", show(&self.dropout_seed)),
            e("patience", self.patience.to_string()),
            e("max_epochs", self.max_epochs.to_string()),
            e("rho", format!("{:?}", self.rho)),
            e("eps", format!("{:?}", self.eps)),
            e("clip_norm", show(&self.clip_norm.map(|c| format!("{c:?}")))),
            e("max_len", self.max_len.to_string()),
            e("beam", self.beam.to_string()),
            e("log_timing", self.log_timing.to_string()),
        ]
    }

    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in entries {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        RunConfig::from_entries(&parse_key_values(text, origin)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        RunConfig::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        format_key_values(&self.entries())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_path(path)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            dropout: self.dropout,
            patience: self.patience,
            max_epochs: self.max_epochs,
            rho: self.rho,
            eps: self.eps,
            clip_norm: self.clip_norm,
            seed: self.seed,
            dropout_seed: self.dropout_seed.unwrap_or(self.seed),
            max_len: self.max_len,
            log_timing: self.log_timing,
        }
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize, feature_depth: Option<usize>) -> ModelConfig {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            src_emb: self.src_emb,
            tgt_emb: self.tgt_emb,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            att_dim: self.att_dim,
            init_hidden: self.init_hidden,
            out_dim: self.out_dim,
            image_depth: if self.multimodal { feature_depth } else { None },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        if self.embeddings != EmbeddingSource::Along && self.embedding_file.is_none() {
            return Err(Error::Config(format!(
                "embeddings = {} needs embedding_file",
                self.embeddings.as_str()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn here() -> &'static Path {
        Path::new("<test>")
    }

    #[test]
    fn round_trips_exactly() {
        let mut c = RunConfig::default();
        c.dropout = 0.1 + 0.2;
        c.clip_norm = None;
        c.embedding_file = Some(PathBuf::from("emb/x.mnt"));
        c.embeddings = EmbeddingSource::Multimodal;
        let back = RunConfig::parse(&c.to_text(), here()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# experiment\n\nseed = 7   # trailing\n  dropout=0.5\n";
        let c = RunConfig::parse(text, here()).unwrap();
        assert_eq!((c.seed, c.dropout), (7, 0.5));
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(RunConfig::parse("seed 7\n", here()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse("a = 1\na = 2\n", here()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::parse("colour = red\n", here()), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("seed = x\n", here()), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("embeddings = fasttext\n", here()), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig {
            embeddings: EmbeddingSource::Glove,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
