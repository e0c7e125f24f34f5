use std::collections::HashMap;

use super::ScoreReport;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BleuMode {
    /// Pooled counts, no smoothing.
    Corpus,
    /// Add-one smoothing on orders 2..=4.
    Sentence,
}

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..=4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

pub fn sentence_stats<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> BleuStats {
    let mut stats = BleuStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        stats.matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Modified precisions for orders 1..=4 (0 where the hypothesis has no n-grams).
pub fn precisions(stats: &BleuStats, smooth: bool) -> [f64; MAX_ORDER] {
    let mut p = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = (stats.matches[n] as f64, stats.totals[n] as f64);
        if stats.totals[n] == 0 {
            continue;
        }
        p[n] = if smooth && n >= 1 {
            (m + 1.0) / (t + 1.0)
        } else {
            m / t
        };
    }
    p
}

pub fn brevity_penalty(stats: &BleuStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).min(0.0).exp()
}

/// BLEU in [0, 100]. The geometric mean runs over the orders for which the
/// hypothesis side has at least one n-gram, so short segments are scored on
/// the orders they can have.
pub fn score_from_stats(stats: &BleuStats, smooth: bool) -> f64 {
    let p = precisions(stats, smooth);
    let orders: Vec<usize> = (0..MAX_ORDER).filter(|&n| stats.totals[n] > 0).collect();
    if orders.is_empty() || orders.iter().any(|&n| p[n] == 0.0) {
        return 0.0;
    }
    let log_mean = orders.iter().map(|&n| p[n].ln()).sum::<f64>() / orders.len() as f64;
    100.0 * brevity_penalty(stats) * log_mean.exp()
}

/// BLEU4 over parallel hypothesis/reference token lists.
pub fn bleu4<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<T>],
    mode: BleuMode,
) -> Result<ScoreReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let per: Vec<BleuStats> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| sentence_stats(h, r))
        .collect();
    let mut pooled = BleuStats::default();
    per.iter().for_each(|s| pooled.add(s));
    let sentence_scores: Vec<f64> = per.iter().map(|s| score_from_stats(s, true)).collect();
    let smooth = mode == BleuMode::Sentence;
    let score = match mode {
        BleuMode::Corpus => score_from_stats(&pooled, false),
        BleuMode::Sentence if sentence_scores.is_empty() => 0.0,
        BleuMode::Sentence => sentence_scores.iter().sum::<f64>() / sentence_scores.len() as f64,
    };
    Ok(ScoreReport {
        metric: "BLEU4".into(),
        score,
        sentence_scores,
        precisions: Some(precisions(&pooled, smooth)),
        brevity_penalty: Some(brevity_penalty(&pooled)),
    })
}
