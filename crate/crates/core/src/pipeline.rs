//! The experiment stages behind the command-line tool: preprocessing,
//! mapper training, embedding construction, training, translation, scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::corpus::dataset::read_lines;
use crate::corpus::{bpe_learn, build_vocab, BpeMerges, Example, ParallelCorpus, RawParallel, Segmenter, Split, Vocabulary};
use crate::embeddings::{
    build_multimodal_matrix, load_pretrained_vectors, load_word_pairs, train_mapper, EmbeddingSource, MapperConfig,
    MapperReport, VisualMapper, WordVectors, MULTIMODAL_DIM,
};
use crate::error::{Error, IoContext, Result};
use crate::features::{FeatureStore, ImageAnnotations};
use crate::metrics::{bleu4, evaluate, BleuMode, EvaluationReport};
use crate::model::{Model, Pair, SearchMode, Translation};
use crate::tensor::io::{load_tensor, save_tensor};
use crate::tensor::{Rng, Tensor};
use crate::training::checkpoint::{load_manifest, load_model, save_checkpoint, Manifest};
use crate::training::trainer::{train as run_training, TrainReport};

pub const SRC_VOCAB: &str = "vocab.src";
pub const TGT_VOCAB: &str = "vocab.tgt";
pub const SRC_BPE: &str = "bpe.src";
pub const TGT_BPE: &str = "bpe.tgt";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn ids_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.ids"))
}

fn raw_file(dir: &Path, split: Split, ext: &str) -> PathBuf {
    dir.join(format!("{split}.{ext}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_path(parent)?;
    }
    std::fs::write(path, text).with_path(path)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub examples: Vec<(Split, usize)>,
}

/// Reads `{split}.src`, `{split}.tgt` and `{split}.keys` from `raw_dir`
/// (train required, dev and test optional), learns BPE and vocabularies on
/// the training split and writes the encoded corpus to `out_dir`.
pub fn preprocess(raw_dir: &Path, out_dir: &Path, config: &RunConfig) -> Result<PreprocessSummary> {
    let mut raws = BTreeMap::new();
    for split in Split::ALL {
        let paths = ["src", "tgt", "keys"].map(|e| raw_file(raw_dir, split, e));
        if split != Split::Train && !paths[0].exists() {
            continue;
        }
        raws.insert(split, RawParallel::read(&paths[0], &paths[1], &paths[2])?);
    }
    let train = &raws[&Split::Train];
    if train.src.is_empty() {
        return Err(Error::data(format!("{}: training split is empty", raw_dir.display())));
    }
    let tokenized = |lines: &[String]| lines.iter().map(|l| crate::corpus::tokenize(l)).collect::<Vec<_>>();
    let (src_tok, tgt_tok) = (tokenized(&train.src), tokenized(&train.tgt));
    let tgt_merges = bpe_learn(&tgt_tok, config.bpe_merges);
    let src_merges = config.src_bpe.then(|| bpe_learn(&src_tok, config.bpe_merges));
    let src_seg = src_merges.clone().map_or_else(Segmenter::words, Segmenter::with_bpe);
    let tgt_seg = Segmenter::with_bpe(tgt_merges.clone());
    let segment = |seg: &Segmenter, toks: &[Vec<String>]| toks.iter().map(|t| seg.segment_tokens(t)).collect::<Vec<_>>();
    let src_vocab = build_vocab(&segment(&src_seg, &src_tok), config.min_count)?;
    let tgt_vocab = build_vocab(&segment(&tgt_seg, &tgt_tok), config.min_count)?;

    std::fs::create_dir_all(out_dir).with_path(out_dir)?;
    src_vocab.save(&out_dir.join(SRC_VOCAB))?;
    tgt_vocab.save(&out_dir.join(TGT_VOCAB))?;
    tgt_merges.save(&out_dir.join(TGT_BPE))?;
    if let Some(m) = &src_merges {
        m.save(&out_dir.join(SRC_BPE))?;
    }
    let mut examples = Vec::new();
    for (split, raw) in &raws {
        let corpus = ParallelCorpus::new(
            *split,
            (0..raw.src.len())
                .map(|i| Example {
                    src: src_vocab.encode_sentence(&src_seg.segment(&raw.src[i])),
                    tgt: tgt_vocab.encode_sentence(&tgt_seg.segment(&raw.tgt[i])),
                    image_key: raw.keys[i].clone(),
                })
                .collect(),
        )?;
        corpus.save(&ids_file(out_dir, *split))?;
        examples.push((*split, corpus.len()));
    }
    config.save(&out_dir.join(CONFIG_FILE))?;
    Ok(PreprocessSummary {
        src_vocab: src_vocab.len(),
        tgt_vocab: tgt_vocab.len(),
        examples,
    })
}

/// Vocabularies and segmenters of a preprocessed corpus directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub src_seg: Segmenter,
    pub tgt_seg: Segmenter,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let bpe = |name: &str| -> Result<Segmenter> {
            let path = dir.join(name);
            Ok(if path.exists() { Segmenter::with_bpe(BpeMerges::load(&path)?) } else { Segmenter::words() })
        };
        Ok(Dataset {
            dir: dir.to_path_buf(),
            src_vocab: Vocabulary::load(&dir.join(SRC_VOCAB))?,
            tgt_vocab: Vocabulary::load(&dir.join(TGT_VOCAB))?,
            src_seg: bpe(SRC_BPE)?,
            tgt_seg: bpe(TGT_BPE)?,
        })
    }

    pub fn split(&self, split: Split) -> Result<ParallelCorpus> {
        ParallelCorpus::load(split, &ids_file(&self.dir, split))
    }

    pub fn encode_source(&self, line: &str) -> Vec<usize> {
        self.src_vocab.encode_sentence(&self.src_seg.segment(line))
    }

    /// Word-level tokens of a target id sequence, subwords rejoined.
    pub fn target_words(&self, ids: &[usize]) -> Result<Vec<String>> {
        Ok(self.tgt_seg.join(&self.tgt_vocab.decode_ids(ids)?))
    }
}

pub fn cmd_train_mapper(pairs: &Path, out: &Path, config: &MapperConfig) -> Result<MapperReport> {
    let pairs = load_word_pairs(pairs)?;
    let (mapper, report) = train_mapper(&pairs, config)?;
    mapper.save(out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedSummary {
    pub rows: usize,
    pub cols: usize,
    /// Ordinary vocabulary words without a pretrained vector.
    pub missing: usize,
}

/// Writes the `V × 428` multimodal embedding matrix of `vocab`.
pub fn cmd_embed(mapper: &Path, vectors: &Path, vocab: &Path, out: &Path, seed: u64) -> Result<EmbedSummary> {
    let mapper = VisualMapper::load(mapper)?;
    let vectors = WordVectors::load(vectors)?;
    let vocab = Vocabulary::load(vocab)?;
    let mut rng = Rng::derive(seed, "embeddings");
    let (m, covered) = build_multimodal_matrix(&vectors, &vocab, &mapper, &mut rng)?;
    let missing = vocab.len() - crate::corpus::vocab::SPECIALS.len() - covered;
    log::info!("{missing} source words had no pretrained vector");
    save_tensor(out, &m.matrix)?;
    Ok(EmbedSummary {
        rows: m.matrix.rows(),
        cols: m.matrix.cols(),
        missing,
    })
}

/// Pretrained source embeddings for the configured mode, if any.
fn source_embeddings(config: &RunConfig, vocab: &Vocabulary) -> Result<Option<Tensor>> {
    let file = || {
        config
            .embedding_file
            .as_deref()
            .ok_or_else(|| Error::Config(format!("embeddings = {} needs embedding_file", config.embeddings.as_str())))
    };
    let m = match config.embeddings {
        EmbeddingSource::Along => return Ok(None),
        EmbeddingSource::Glove => {
            let mut rng = Rng::derive(config.seed, "embeddings");
            load_pretrained_vectors(file()?, vocab, &mut rng)?.0.matrix
        }
        EmbeddingSource::Multimodal => {
            let m = load_tensor(file()?)?;
            if m.rank() != 2 || m.cols() != MULTIMODAL_DIM {
                return Err(Error::format(format!(
                    "multimodal embeddings must be {MULTIMODAL_DIM} wide, got shape {:?}",
                    m.shape()
                )));
            }
            m
        }
    };
    if m.shape() != [vocab.len(), config.src_emb] {
        return Err(Error::format(format!(
            "pretrained embeddings have shape {:?}, model expects [{}, {}]",
            m.shape(),
            vocab.len(),
            config.src_emb
        )));
    }
    Ok(Some(m))
}

fn check_keys(store: &FeatureStore, corpora: &[&ParallelCorpus]) -> Result<()> {
    for c in corpora {
        if let Some(ex) = c.examples.iter().find(|ex| !store.contains(&ex.image_key)) {
            return Err(Error::data(format!(
                "{} split references image {:?}, which is not in the feature store",
                c.split, ex.image_key
            )));
        }
    }
    Ok(())
}

fn pairs<'a>(corpus: &'a ParallelCorpus, store: Option<&'a FeatureStore>) -> Result<Vec<Pair<'a>>> {
    corpus
        .examples
        .iter()
        .map(|ex| {
            Ok(Pair {
                src: &ex.src,
                tgt: &ex.tgt,
                image: store.map(|s| s.get(&ex.image_key)).transpose()?,
            })
        })
        .collect()
}

/// Corpus BLEU4 of greedy translations of `corpus` at the word level.
pub fn dev_bleu(model: &Model, data: &Dataset, pairs: &[Pair<'_>], max_len: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let t = model.translate(p.src, p.image, SearchMode::Greedy, max_len)?;
        hyps.push(data.target_words(&t.ids)?);
        refs.push(data.target_words(p.tgt)?);
    }
    Ok(bleu4(&hyps, &refs, BleuMode::Corpus)?.score)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
}

/// Trains on `{data_dir}/train.ids` with early stopping on `dev.ids`, and
/// writes the best checkpoint, `log.csv` and the resolved `config.txt` to
/// `out_dir`.
pub fn cmd_train(data_dir: &Path, features: Option<&Path>, out_dir: &Path, config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let data = Dataset::open(data_dir)?;
    let train = data.split(Split::Train)?;
    let dev = data.split(Split::Dev)?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::data("training needs nonempty train and dev splits"));
    }
    let store = match (config.multimodal, features) {
        (true, Some(dir)) => Some(FeatureStore::open(dir, config.feature_norm)?),
        (true, None) => return Err(Error::invalid("multimodal training needs a feature directory")),
        (false, _) => None,
    };
    if let Some(s) = &store {
        check_keys(s, &[&train, &dev])?;
    }
    let pretrained = source_embeddings(config, &data.src_vocab)?;

    let model_config = config.model_config(data.src_vocab.len(), data.tgt_vocab.len(), store.as_ref().map(FeatureStore::depth));
    let mut model = Model::new(model_config, config.seed, config.init_std)?;
    let emb = model.params.id("emb.src").ok_or_else(|| Error::Internal("no source embedding".into()))?;
    if let Some(m) = pretrained {
        *model.params.value_mut(emb) = m;
    }
    if config.freeze_embeddings {
        model.params.set_frozen(emb, true);
    }

    let train_pairs = pairs(&train, store.as_ref())?;
    let dev_pairs = pairs(&dev, store.as_ref())?;
    let report = run_training(&mut model, &train_pairs, &config.train_config(), |m| {
        dev_bleu(m, &data, &dev_pairs, config.max_len)
    })?;

    let manifest = Manifest {
        epoch: report.best_epoch,
        dev_bleu: report.best_bleu,
        src_vocab_sha256: data.src_vocab.fingerprint(),
        tgt_vocab_sha256: data.tgt_vocab.fingerprint(),
        src_vocab_size: data.src_vocab.len(),
        tgt_vocab_size: data.tgt_vocab.len(),
        features: store.as_ref().map(|s| (s.positions(), s.depth())),
        frozen: model
            .params
            .ids()
            .filter(|&id| model.params.is_frozen(id))
            .map(|id| model.params.name(id).to_string())
            .collect(),
        config: config.clone(),
    };
    let checkpoint = out_dir.join(CHECKPOINT_DIR);
    save_checkpoint(&checkpoint, &model, &manifest)?;
    write(&out_dir.join(LOG_FILE), &report.log_csv())?;
    config.save(&out_dir.join(CONFIG_FILE))?;
    Ok(TrainSummary { report, checkpoint })
}

#[derive(Clone, Debug)]
pub struct TranslateRequest<'a> {
    pub checkpoint: &'a Path,
    pub data_dir: &'a Path,
    /// Raw source sentences, one per line.
    pub input: &'a Path,
    /// Image key per input line, for multimodal models.
    pub keys: Option<&'a Path>,
    pub features: Option<&'a Path>,
    pub output: &'a Path,
    /// Defaults to a beam of the configured width.
    pub mode: Option<SearchMode>,
    pub max_len: Option<usize>,
    pub dump_attention: Option<&'a Path>,
}

/// Attention weights as CSV: `sentence,step,modality,position,weight`.
pub fn attention_csv(translations: &[Translation]) -> String {
    let mut s = String::from("sentence,step,modality,position,weight\n");
    for (n, t) in translations.iter().enumerate() {
        for (modality, alphas) in [("text", &t.text_alphas), ("image", &t.image_alphas)] {
            for (step, row) in alphas.iter().enumerate() {
                for (pos, a) in row.iter().enumerate() {
                    let _ = writeln!(s, "{n},{step},{modality},{pos},{a:?}");
                }
            }
        }
    }
    s
}

/// Translates every input line and writes one hypothesis per line.
pub fn cmd_translate(req: &TranslateRequest<'_>) -> Result<Vec<Translation>> {
    let manifest = load_manifest(req.checkpoint)?;
    let data = Dataset::open(req.data_dir)?;
    manifest.check_vocabularies(&data.src_vocab, &data.tgt_vocab)?;
    let config = &manifest.config;
    let mode = req.mode.unwrap_or(SearchMode::Beam(config.beam));
    let max_len = req.max_len.unwrap_or(config.max_len);
    if matches!(mode, SearchMode::Beam(0)) || max_len == 0 {
        return Err(Error::invalid("beam size and max_len must be at least 1"));
    }

    let lines = read_lines(req.input)?;
    let store = match manifest.features {
        None => None,
        Some(shape) => {
            let dir = req.features.ok_or_else(|| Error::invalid("multimodal model needs a feature directory"))?;
            let store = FeatureStore::open(dir, config.feature_norm)?;
            if (store.positions(), store.depth()) != shape {
                return Err(Error::data(format!(
                    "features are {}x{}, model was trained on {}x{}",
                    store.positions(),
                    store.depth(),
                    shape.0,
                    shape.1
                )));
            }
            Some(store)
        }
    };
    let keys = match (&store, req.keys) {
        (Some(_), Some(path)) => {
            let keys = read_lines(path)?;
            if keys.len() != lines.len() {
                return Err(Error::data(format!(
                    "{} has {} lines, {} has {} lines",
                    req.input.display(),
                    lines.len(),
                    path.display(),
                    keys.len()
                )));
            }
            keys
        }
        (Some(_), None) => return Err(Error::invalid("multimodal model needs image keys")),
        (None, _) => Vec::new(),
    };
    let images: Vec<Option<&ImageAnnotations>> = match &store {
        Some(s) => keys.iter().map(|k| s.get(k.trim()).map(Some)).collect::<Result<_>>()?,
        None => vec![None; lines.len()],
    };

    let model = load_model(req.checkpoint, &manifest)?;
    let mut out = String::new();
    let mut translations = Vec::with_capacity(lines.len());
    for (line, image) in lines.iter().zip(images) {
        let t = model.translate(&data.encode_source(line), image, mode, max_len)?;
        let _ = writeln!(out, "{}", data.target_words(&t.ids)?.join(" "));
        translations.push(t);
    }
    write(req.output, &out)?;
    if let Some(path) = req.dump_attention {
        write(path, &attention_csv(&translations))?;
    }
    Ok(translations)
}

/// Scores tokenized hypotheses against references and optionally writes
/// the report and a per-sentence TSV.
pub fn cmd_score(hyp: &Path, reference: &Path, report: Option<&Path>, tsv: Option<&Path>) -> Result<EvaluationReport> {
    let (h, r) = (read_lines(hyp)?, read_lines(reference)?);
    if h.len() != r.len() {
        return Err(Error::data(format!(
            "{} has {} lines, {} has {} lines",
            hyp.display(),
            h.len(),
            reference.display(),
            r.len()
        )));
    }
    let tok = |lines: &[String]| lines.iter().map(|l| crate::corpus::tokenize(l)).collect::<Vec<_>>();
    let eval = evaluate(&tok(&h), &tok(&r))?;
    if let Some(p) = report {
        write(p, &eval.to_text())?;
    }
    if let Some(p) = tsv {
        write(p, &eval.sentence_tsv())?;
    }
    Ok(eval)
}
