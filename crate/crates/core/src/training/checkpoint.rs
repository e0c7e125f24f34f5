//! Model checkpoints: a parameter bundle plus a `key = value` manifest with
//! the run configuration, vocabulary hashes, epoch and dev BLEU.

use std::path::Path;

use crate::config::{format_key_values, parse_key_values, RunConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, IoContext, Result};
use crate::model::Model;
use crate::tensor::io::{encode_bundle, load_bundle};

pub const PARAMS_FILE: &str = "params.mntb";
pub const MANIFEST_FILE: &str = "manifest.txt";
const FORMAT: &str = "mnmt-checkpoint 1";
const CONFIG_PREFIX: &str = "config.";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub epoch: usize,
    pub dev_bleu: f64,
    pub src_vocab_sha256: String,
    pub tgt_vocab_sha256: String,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    /// `(positions, depth)` of the image features, for multimodal models.
    pub features: Option<(usize, usize)>,
    /// Parameters excluded from training.
    pub frozen: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut e: Vec<(String, String)> = vec![
            ("format".into(), FORMAT.into()),
            ("epoch".into(), self.epoch.to_string()),
            ("dev_bleu".into(), format!("{:?}", self.dev_bleu)),
            ("src_vocab_sha256".into(), self.src_vocab_sha256.clone()),
            ("tgt_vocab_sha256".into(), self.tgt_vocab_sha256.clone()),
            ("src_vocab_size".into(), self.src_vocab_size.to_string()),
            ("tgt_vocab_size".into(), self.tgt_vocab_size.to_string()),
            (
                "features".into(),
                self.features.map_or_else(|| "none".into(), |(l, d)| format!("{l}x{d}")),
            ),
            (
                "frozen".into(),
                if self.frozen.is_empty() { "none".into() } else { self.frozen.join(",") },
            ),
        ];
        e.extend(
            self.config
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("{CONFIG_PREFIX}{k}"), v)),
        );
        format_key_values(&e)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let entries = parse_key_values(text, origin)?;
        let get = |k: &str| -> Result<&str> {
            entries
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format(format!("{}: missing {k}", origin.display())))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::format(format!("{}: bad {k}", origin.display())))
        };
        if get("format")? != FORMAT {
            return Err(Error::format(format!("{}: not a {FORMAT} manifest", origin.display())));
        }
        let features = match get("features")? {
            "none" => None,
            s => {
                let (l, d) = s
                    .split_once('x')
                    .and_then(|(l, d)| Some((l.parse().ok()?, d.parse().ok()?)))
                    .ok_or_else(|| Error::format(format!("{}: bad features {s:?}", origin.display())))?;
                Some((l, d))
            }
        };
        let frozen = match get("frozen")? {
            "none" => Vec::new(),
            s => s.split(',').map(str::to_string).collect(),
        };
        let config_entries: Vec<(String, String)> = entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(CONFIG_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Manifest {
            epoch: num("epoch")?,
            dev_bleu: get("dev_bleu")?
                .parse()
                .map_err(|_| Error::format(format!("{}: bad dev_bleu", origin.display())))?,
            src_vocab_sha256: get("src_vocab_sha256")?.to_string(),
            tgt_vocab_sha256: get("tgt_vocab_sha256")?.to_string(),
            src_vocab_size: num("src_vocab_size")?,
            tgt_vocab_size: num("tgt_vocab_size")?,
            features,
            frozen,
            config: RunConfig::from_entries(&config_entries)?,
        })
    }

    /// Rejects vocabularies other than the ones the model was trained with.
    pub fn check_vocabularies(&self, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
        for (side, want, got) in [
            ("source", &self.src_vocab_sha256, src.fingerprint()),
            ("target", &self.tgt_vocab_sha256, tgt.fingerprint()),
        ] {
            if *want != got {
                return Err(Error::Config(format!(
                    "{side} vocabulary hash {got} does not match checkpoint {want}"
                )));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(dir: &Path, model: &Model, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_path(dir)?;
    let params = dir.join(PARAMS_FILE);
    std::fs::write(&params, encode_bundle(&model.params.snapshot())).with_path(&params)?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).with_path(&path)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_path(&path)?;
    Manifest::parse(&text, &path)
}

/// Rebuilds the model described by `manifest` and loads its parameters.
pub fn load_model(dir: &Path, manifest: &Manifest) -> Result<Model> {
    let c = &manifest.config;
    let config = c.model_config(
        manifest.src_vocab_size,
        manifest.tgt_vocab_size,
        manifest.features.map(|(_, d)| d),
    );
    let mut model = Model::new(config, c.seed, c.init_std)?;
    model.params.load_snapshot(&load_bundle(&dir.join(PARAMS_FILE))?)?;
    for name in &manifest.frozen {
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::format(format!("frozen parameter {name} not in model")))?;
        model.params.set_frozen(id, true);
    }
    Ok(model)
}
