use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mnmt::config::RunConfig;
use mnmt::embeddings::{EmbeddingSource, MapperConfig};
use mnmt::model::SearchMode;
use mnmt::pipeline::{self, TranslateRequest};
use mnmt::synth::{synth_corpus, SynthSpec};
use mnmt::{Error, Result};

/// Multimodal neural machine translation with doubly-attentive decoding.
#[derive(Parser, Debug)]
#[command(name = "mnmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, applied in order: defaults, `--config`, `--set`,
/// then the dedicated flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got {kv:?}")))?;
            c.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize, learn BPE and vocabularies, encode the corpus.
    Preprocess {
        /// Directory with {train,dev,test}.{src,tgt,keys}.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the linguistic-to-visual mapper on `word l… | v…` pairs.
    TrainMapper {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 175)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        /// Width of a tanh hidden layer; omit for a single affine map.
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Build the 428-wide multimodal embedding matrix of a vocabulary.
    Embed {
        #[arg(long)]
        mapper: PathBuf,
        /// 300-dimensional word vectors, `word v1 … v300` per line.
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a model with early stopping on dev BLEU.
    Train {
        /// Output directory of `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_source)]
        embeddings: Option<EmbeddingSource>,
        #[arg(long)]
        freeze_embeddings: bool,
        /// Word vectors (glove) or an `embed` matrix (multimodal).
        #[arg(long)]
        embedding_file: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Translate raw source sentences with a trained checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Image key per input line.
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, conflicts_with = "greedy")]
        beam: Option<usize>,
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        max_len: Option<usize>,
        /// Write attention weights as CSV.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// BLEU4, METEOR (exact match) and TER of hypotheses against references.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-sentence scores as TSV.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the full model on a toy batch.
    CheckGrad {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Central-difference step, within [1e-7, 1e-4].
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Write a small synthetic raw corpus and matching image features.
    SynthData {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        train: usize,
        #[arg(long, default_value_t = 8)]
        dev: usize,
        #[arg(long, default_value_t = 8)]
        test: usize,
        #[arg(long, default_value_t = 4)]
        positions: usize,
        #[arg(long, default_value_t = 6)]
        depth: usize,
    },
}

fn parse_source(s: &str) -> std::result::Result<EmbeddingSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { raw, out, cfg } => {
            let s = pipeline::preprocess(&raw, &out, &cfg.resolve()?)?;
            println!("source vocabulary: {}", s.src_vocab);
            println!("target vocabulary: {}", s.tgt_vocab);
            for (split, n) in s.examples {
                println!("{split}: {n} examples");
            }
        }
        Command::TrainMapper {
            pairs,
            out,
            epochs,
            lr,
            dropout,
            hidden,
            seed,
        } => {
            let config = MapperConfig {
                learning_rate: lr,
                input_dropout: dropout,
                epochs,
                hidden,
                seed,
            };
            let report = pipeline::cmd_train_mapper(&pairs, &out, &config)?;
            let mse = report.final_mse().ok_or_else(|| Error::InvalidArgument("no epochs run".into()))?;
            println!("final MSE: {mse:.6e}");
        }
        Command::Embed {
            mapper,
            vectors,
            vocab,
            out,
            seed,
        } => {
            let s = pipeline::cmd_embed(&mapper, &vectors, &vocab, &out, seed)?;
            println!("embeddings: {} x {}, {} words without a vector", s.rows, s.cols, s.missing);
        }
        Command::Train {
            data,
            features,
            out,
            embeddings,
            freeze_embeddings,
            embedding_file,
            max_len,
            cfg,
        } => {
            let mut c = cfg.resolve()?;
            if let Some(e) = embeddings {
                c.embeddings = e;
            }
            c.freeze_embeddings |= freeze_embeddings;
            if embedding_file.is_some() {
                c.embedding_file = embedding_file;
            }
            if let Some(m) = max_len {
                c.max_len = m;
            }
            let s = pipeline::cmd_train(&data, features.as_deref(), &out, &c)?;
            println!(
                "best dev BLEU {:.2} at epoch {} of {}; checkpoint {}",
                s.report.best_bleu,
                s.report.best_epoch,
                s.report.log.len(),
                s.checkpoint.display()
            );
        }
        Command::Translate {
            checkpoint,
            data,
            input,
            keys,
            features,
            output,
            beam,
            greedy,
            max_len,
            dump_attention,
        } => {
            let mode = match (greedy, beam) {
                (true, _) => Some(SearchMode::Greedy),
                (false, Some(k)) => Some(SearchMode::Beam(k)),
                (false, None) => None,
            };
            let t = pipeline::cmd_translate(&TranslateRequest {
                checkpoint: &checkpoint,
                data_dir: &data,
                input: &input,
                keys: keys.as_deref(),
                features: features.as_deref(),
                output: &output,
                mode,
                max_len,
                dump_attention: dump_attention.as_deref(),
            })?;
            log::info!("translated {} sentences", t.len());
        }
        Command::Score {
            hyp,
            reference,
            output,
            tsv,
        } => {
            let report = pipeline::cmd_score(&hyp, &reference, output.as_deref(), tsv.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::CheckGrad { seed, eps } => {
            let r = mnmt::synth::toy_gradient_check(seed, eps)?;
            println!(
                "checked {} entries, max relative error {:.3e}",
                r.entries_checked, r.max_relative_error
            );
            if !(r.max_relative_error < GRADCHECK_TOLERANCE) {
                return Err(Error::Numeric(format!(
                    "gradient check failed: {:.3e} at {:?} (analytic {}, numeric {})",
                    r.max_relative_error, r.worst, r.worst_analytic, r.worst_numeric
                )));
            }
        }
        Command::SynthData {
            raw,
            features,
            seed,
            train,
            dev,
            test,
            positions,
            depth,
        } => {
            let spec = SynthSpec {
                seed,
                train,
                dev,
                test,
                positions,
                depth,
            };
            synth_corpus(&spec)?.write(&raw, &features)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
