//! Translation edit rate with greedy block shifts.

use super::ScoreReport;
use crate::error::{Error, Result};

/// Longest block that may be shifted, in tokens.
pub const MAX_SHIFT_SIZE: usize = 10;
/// Farthest a block may move, in token positions.
pub const MAX_SHIFT_DIST: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TerStats {
    pub shifts: usize,
    /// Insertions, deletions and substitutions left after shifting.
    pub edits: usize,
    pub ref_len: usize,
}

impl TerStats {
    pub fn total_edits(&self) -> usize {
        self.shifts + self.edits
    }

    pub fn score(&self) -> f64 {
        100.0 * self.total_edits() as f64 / self.ref_len as f64
    }
}

/// Token-level Levenshtein distance with unit costs.
pub fn edit_distance<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x.as_ref() != y.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn occurs_in<T: AsRef<str>>(span: &[&str], reference: &[T]) -> bool {
    reference.len() >= span.len()
        && reference
            .windows(span.len())
            .any(|w| w.iter().zip(span).all(|(a, b)| a.as_ref() == *b))
}

/// Edit statistics for one hypothesis against one reference.
///
/// Shifts are found greedily: each round applies the single block move that
/// lowers the remaining edit distance the most (longer blocks, then leftmost
/// source, then leftmost destination win ties). Only blocks that occur
/// verbatim in the reference are considered.
pub fn ter_stats<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Result<TerStats> {
    if reference.is_empty() {
        return Err(Error::invalid("ter: empty reference"));
    }
    let mut cur: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let mut shifts = 0;
    let mut dist = edit_distance(&cur, reference);
    while dist > 0 {
        let mut best: Option<(usize, Vec<&str>)> = None;
        for len in (1..=MAX_SHIFT_SIZE.min(cur.len())).rev() {
            for start in 0..=cur.len() - len {
                let span = &cur[start..start + len];
                if !occurs_in(span, reference) {
                    continue;
                }
                let mut rest = cur[..start].to_vec();
                rest.extend_from_slice(&cur[start + len..]);
                for dest in 0..=rest.len() {
                    if dest == start || dest.abs_diff(start) > MAX_SHIFT_DIST {
                        continue;
                    }
                    let mut cand = rest[..dest].to_vec();
                    cand.extend_from_slice(span);
                    cand.extend_from_slice(&rest[dest..]);
                    let d = edit_distance(&cand, reference);
                    if d < best.as_ref().map_or(dist, |b| b.0) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            Some((d, cand)) => {
                cur = cand;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    Ok(TerStats {
        shifts,
        edits: dist,
        ref_len: reference.len(),
    })
}

pub fn ter<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Result<f64> {
    Ok(ter_stats(hyp, reference)?.score())
}

/// Corpus TER: pooled edits over pooled reference length.
pub fn ter_corpus<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<T>],
) -> Result<ScoreReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "ter: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let stats = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| ter_stats(h, r))
        .collect::<Result<Vec<_>>>()?;
    let edits: usize = stats.iter().map(TerStats::total_edits).sum();
    let len: usize = stats.iter().map(|s| s.ref_len).sum();
    Ok(ScoreReport {
        metric: "TER".into(),
        score: if len == 0 { 0.0 } else { 100.0 * edits as f64 / len as f64 },
        sentence_scores: stats.iter().map(TerStats::score).collect(),
        precisions: None,
        brevity_penalty: None,
    })
}
