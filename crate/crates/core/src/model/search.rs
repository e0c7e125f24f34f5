//! Greedy and beam search over any step-wise scorer.

use std::cmp::Ordering;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

/// Something that maps a decoder state and the previous token to next-token
/// log-probabilities and the following state.
pub trait StepScorer {
    type State: Clone;

    fn initial(&self) -> Self::State;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Emitted tokens, including the final EOS when one was produced.
    pub ids: Vec<usize>,
    /// State after each emitted token.
    pub states: Vec<S>,
    pub log_prob: f64,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    /// Length-normalized score `Σ log p / length`.
    pub fn score(&self) -> f64 {
        self.log_prob / self.ids.len().max(1) as f64
    }

    /// Tokens without the trailing EOS.
    pub fn tokens(&self) -> &[usize] {
        match self.ids.last() {
            Some(&EOS) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }
}

/// Ranks higher score first, then the lexicographically smaller sequence.
fn rank(a_score: f64, a_ids: &[usize], b_score: f64, b_ids: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_ids.cmp(b_ids))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<S: StepScorer>(scorer: &S, max_len: usize) -> Result<Hypothesis<S::State>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        states: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    let mut state = scorer.initial();
    let mut prev = BOS;
    while hyp.ids.len() < max_len {
        let (logp, next) = scorer.step(&state, prev)?;
        let y = argmax(&logp);
        hyp.log_prob += logp[y];
        hyp.ids.push(y);
        hyp.states.push(next.clone());
        state = next;
        prev = y;
        if y == EOS {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Beam search that shrinks the live beam as hypotheses finish. A
/// hypothesis still live at `max_len` is closed as truncated and competes
/// with the finished ones under the same normalized score.
pub fn beam<S: StepScorer>(scorer: &S, beam_size: usize, max_len: usize) -> Result<Hypothesis<S::State>> {
    if beam_size == 0 {
        return Err(Error::invalid("beam size must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut live = vec![(
        Hypothesis {
            ids: Vec::new(),
            states: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        scorer.initial(),
    )];
    let mut done: Vec<Hypothesis<S::State>> = Vec::new();

    for t in 0..max_len {
        if live.is_empty() || done.len() >= beam_size {
            break;
        }
        let mut expansions = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize, Vec<usize>)> = Vec::new();
        for (h, (hyp, state)) in live.iter().enumerate() {
            let prev = hyp.ids.last().copied().unwrap_or(BOS);
            let (logp, next) = scorer.step(state, prev)?;
            for (y, lp) in logp.iter().enumerate() {
                let mut ids = hyp.ids.clone();
                ids.push(y);
                cands.push((hyp.log_prob + lp, h, y, ids));
            }
            expansions.push(next);
        }
        // Live hypotheses share a length, so ranking by the raw sum equals
        // ranking by the normalized score.
        cands.sort_by(|a, b| rank(a.0, &a.3, b.0, &b.3));
        cands.truncate(beam_size - done.len());

        let mut next_live = Vec::new();
        for (lp, h, y, ids) in cands {
            let mut states = live[h].0.states.clone();
            states.push(expansions[h].clone());
            let finished = y == EOS;
            let hyp = Hypothesis {
                ids,
                states,
                log_prob: lp,
                finished,
            };
            if finished || t + 1 == max_len {
                done.push(hyp);
            } else {
                let state = expansions[h].clone();
                next_live.push((hyp, state));
            }
        }
        live = next_live;
    }
    done.extend(live.into_iter().map(|(h, _)| h));
    done.into_iter()
        .min_by(|a, b| rank(a.score(), &a.ids, b.score(), &b.ids))
        .ok_or_else(|| Error::Internal("beam search produced no hypothesis".into()))
}
