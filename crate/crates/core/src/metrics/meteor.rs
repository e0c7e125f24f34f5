//! Exact-match-only METEOR: no stemming, synonym or paraphrase modules.

use std::collections::HashMap;

use super::ScoreReport;
use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.9;
pub const GAMMA: f64 = 0.5;
pub const THETA: f64 = 3.0;

/// Search nodes explored before settling for the best alignment found so far.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl MeteorStats {
    pub fn score(&self) -> f64 {
        if self.matches == 0 {
            return 0.0;
        }
        let m = self.matches as f64;
        let p = m / self.hyp_len as f64;
        let r = m / self.ref_len as f64;
        let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
        let penalty = GAMMA * (self.chunks as f64 / m).powf(THETA);
        100.0 * f_mean * (1.0 - penalty)
    }
}

struct Search<'a> {
    hyp: &'a [&'a str],
    candidates: Vec<Vec<usize>>,
    target: usize,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl Search<'_> {
    // `last`: reference position matched by hyp[i-1], if hyp[i-1] was matched
    fn dfs(&mut self, i: usize, matched: usize, chunks: usize, last: Option<usize>) {
        self.nodes += 1;
        if chunks >= self.best || matched + (self.hyp.len() - i) < self.target {
            return;
        }
        if i == self.hyp.len() {
            if matched == self.target {
                self.best = chunks;
            }
            return;
        }
        if self.nodes > SEARCH_BUDGET && self.best != usize::MAX {
            return;
        }
        // continuing the current chunk first finds good bounds early
        let mut order = self.candidates[i].clone();
        if let Some(l) = last {
            order.sort_by_key(|&j| j != l + 1);
        }
        for j in order {
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            let extra = usize::from(last.is_none_or(|l| l + 1 != j));
            self.dfs(i + 1, matched + 1, chunks + extra, Some(j));
            self.used[j] = false;
        }
        self.dfs(i + 1, matched, chunks, None);
    }
}

/// Maximum-match unigram alignment with the fewest chunks.
pub fn meteor_stats<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Result<MeteorStats> {
    if reference.is_empty() {
        return Err(Error::invalid("meteor: empty reference"));
    }
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();

    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for w in &reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut hyp_counts: HashMap<&str, usize> = HashMap::new();
    for w in &hyp {
        *hyp_counts.entry(w).or_insert(0) += 1;
    }
    let target: usize = hyp_counts
        .iter()
        .map(|(w, &c)| c.min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum();
    let mut stats = MeteorStats {
        matches: target,
        chunks: 0,
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    };
    if target == 0 {
        return Ok(stats);
    }
    let candidates = hyp
        .iter()
        .map(|h| (0..reference.len()).filter(|&j| reference[j] == *h).collect())
        .collect();
    let mut search = Search {
        hyp: &hyp,
        candidates,
        target,
        used: vec![false; reference.len()],
        best: usize::MAX,
        nodes: 0,
    };
    search.dfs(0, 0, 0, None);
    stats.chunks = search.best;
    Ok(stats)
}

pub fn meteor_exact<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Result<f64> {
    Ok(meteor_stats(hyp, reference)?.score())
}

/// Corpus score from pooled matches, chunks and lengths.
pub fn meteor_corpus<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<T>],
) -> Result<ScoreReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "meteor: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let per = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| meteor_stats(h, r))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = MeteorStats::default();
    for s in &per {
        pooled.matches += s.matches;
        pooled.chunks += s.chunks;
        pooled.hyp_len += s.hyp_len;
        pooled.ref_len += s.ref_len;
    }
    Ok(ScoreReport {
        metric: "METEOR-exact".into(),
        score: pooled.score(),
        sentence_scores: per.iter().map(MeteorStats::score).collect(),
        precisions: None,
        brevity_penalty: None,
    })
}
