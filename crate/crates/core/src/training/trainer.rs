//! Mini-batch training loop with per-epoch early stopping on dev BLEU.

use std::fmt::Write as _;
use std::time::Instant;

use super::adadelta::{clip_grad_norm, Adadelta, DEFAULT_EPS, DEFAULT_RHO};
use super::dropout::{sample_dropout_plan, DropoutPlan};
use crate::error::{Error, Result};
use crate::metrics::{bleu4, BleuMode};
use crate::model::{Model, Pair, SearchMode};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Seeds batch order.
    pub seed: u64,
    /// Seeds dropout masks.
    pub dropout_seed: u64,
    /// Length limit for greedy dev decoding.
    pub max_len: usize,
    /// Record wall-clock seconds in the log. Off by default so logs are
    /// reproducible byte for byte.
    pub log_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 40,
            dropout: 0.3,
            patience: 20,
            max_epochs: 500,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            clip_norm: Some(1.0),
            seed: 1,
            dropout_seed: 1,
            max_len: 50,
            log_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_epochs == 0 || self.max_len == 0 {
            return Err(Error::Config("max_epochs and max_len must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_bleu: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_bleu: f64,
    pub best_params: Vec<(String, Tensor)>,
}

impl TrainReport {
    /// `epoch,train_loss,dev_bleu,seconds` with a header line.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_bleu,seconds\n");
        for e in &self.log {
            let _ = writeln!(s, "{},{:.6},{:.4},{:.3}", e.epoch, e.train_loss, e.dev_bleu, e.seconds);
        }
        s
    }
}

/// Buckets by source length: seeded shuffle, stable sort by length, cut into
/// batches, then shuffle the batches.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    rng.shuffle(&mut order);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    rng.shuffle(&mut batches);
    batches
}

/// Corpus BLEU4 of greedy translations against the targets, over id tokens.
pub fn greedy_bleu(model: &Model, pairs: &[Pair<'_>], max_len: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let t = model.translate(p.src, p.image, SearchMode::Greedy, max_len)?;
        hyps.push(t.ids.iter().map(usize::to_string).collect::<Vec<_>>());
        let reference = match p.tgt.split_last() {
            Some((&crate::corpus::EOS, rest)) => rest,
            _ => p.tgt,
        };
        refs.push(reference.iter().map(usize::to_string).collect::<Vec<_>>());
    }
    Ok(bleu4(&hyps, &refs, BleuMode::Corpus)?.score)
}

/// Trains `model` in place and leaves it holding the best checkpoint.
///
/// `dev_score` is called after every epoch. A strictly higher score resets
/// the patience counter; the stored checkpoint follows the latest epoch that
/// reaches the best score. Training stops once more than `patience`
/// consecutive epochs fail to improve, or after `max_epochs`.
pub fn train(
    model: &mut Model,
    train_set: &[Pair<'_>],
    config: &TrainConfig,
    mut dev_score: impl FnMut(&Model) -> Result<f64>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut opt = Adadelta::new(&model.params, config.rho, config.eps)?;
    let mut batch_rng = Rng::derive(config.seed, "batches");
    let mut dropout_rng = Rng::derive(config.dropout_seed, "dropout");
    let shapes = model.arch.dropout_shapes();
    let lengths: Vec<usize> = train_set.iter().map(|p| p.src.len()).collect();

    let mut report = TrainReport {
        log: Vec::new(),
        best_epoch: 0,
        best_bleu: f64::NEG_INFINITY,
        best_params: model.params.snapshot(),
    };
    let mut bad_epochs = 0;
    model.params.zero_grads();
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for (b, batch) in make_batches(&lengths, config.batch_size, &mut batch_rng).iter().enumerate() {
            let pairs: Vec<Pair<'_>> = batch.iter().map(|&i| train_set[i]).collect();
            let plans = pairs
                .iter()
                .map(|_| sample_dropout_plan(config.dropout, &mut dropout_rng, &shapes))
                .collect::<Result<Vec<DropoutPlan>>>()?;
            let loss = model.arch.batch_loss(&mut model.params, &pairs, &plans, true)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("loss {loss} in batch {b} of epoch {epoch}")));
            }
            if let Some(c) = config.clip_norm {
                clip_grad_norm(&mut model.params, c);
            }
            opt.step(&mut model.params)
                .map_err(|e| Error::numeric(format!("batch {b} of epoch {epoch}: {e}")))?;
            let n: usize = pairs.iter().map(|p| p.tgt.len()).sum();
            loss_sum += loss * n as f64;
            tokens += n;
        }
        let bleu = dev_score(model)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / tokens as f64,
            dev_bleu: bleu,
            seconds: if config.log_timing { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!("epoch {epoch}: loss {:.4}, dev BLEU {:.2}", entry.train_loss, bleu);
        report.log.push(entry);
        if bleu >= report.best_bleu {
            if bleu > report.best_bleu {
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
            }
            report.best_bleu = bleu;
            report.best_epoch = epoch;
            report.best_params = model.params.snapshot();
        } else {
            bad_epochs += 1;
        }
        if bad_epochs > config.patience {
            break;
        }
    }
    model.params.load_snapshot(&report.best_params)?;
    Ok(report)
}
