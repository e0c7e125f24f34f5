//! Translation quality metrics: BLEU4, TER and exact-match METEOR.

pub mod bleu;
pub mod meteor;
pub mod ter;

use std::fmt::Write as _;

pub use bleu::{bleu4, BleuMode};
pub use meteor::{meteor_corpus, meteor_exact};
pub use ter::{ter, ter_corpus};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub metric: String,
    /// BLEU and METEOR in [0, 100]; TER ≥ 0.
    pub score: f64,
    pub sentence_scores: Vec<f64>,
    pub precisions: Option<[f64; 4]>,
    pub brevity_penalty: Option<f64>,
}

/// All three metrics over one hypothesis/reference set.
#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub bleu: ScoreReport,
    pub meteor: ScoreReport,
    pub ter: ScoreReport,
}

pub fn evaluate<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<T>],
) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        bleu: bleu4(hypotheses, references, BleuMode::Corpus)?,
        meteor: meteor_corpus(hypotheses, references)?,
        ter: ter_corpus(hypotheses, references)?,
    })
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "BLEU4 = {:.2}", self.bleu.score);
        if let Some(p) = self.bleu.precisions {
            let _ = writeln!(
                s,
                "BLEU4 precisions = {:.4} {:.4} {:.4} {:.4}",
                p[0], p[1], p[2], p[3]
            );
        }
        if let Some(bp) = self.bleu.brevity_penalty {
            let _ = writeln!(s, "BLEU4 brevity_penalty = {bp:.4}");
        }
        let _ = writeln!(s, "METEOR-exact = {:.2}", self.meteor.score);
        let _ = writeln!(s, "TER = {:.2}", self.ter.score);
        s
    }

    /// `index<TAB>bleu<TAB>meteor<TAB>ter` per sentence, 1-based.
    pub fn sentence_tsv(&self) -> String {
        let mut s = String::from("sentence\tbleu\tmeteor\tter\n");
        for i in 0..self.bleu.sentence_scores.len() {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}",
                i + 1,
                self.bleu.sentence_scores[i],
                self.meteor.sentence_scores[i],
                self.ter.sentence_scores[i]
            );
        }
        s
    }
}
