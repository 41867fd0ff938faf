//! QA-model-based evaluation of generated questions: answerability and
//! granularity scores, plus agreement statistics against human annotations.

mod joint;
mod stats;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::textproc::TokenId;

pub use joint::{synthetic_qa_examples, JointQaConfig, JointQaModel, QaExample, QaTrainConfig};
pub use stats::{
    correlation_table, pearson, unanimity_ratios, zscore, AnnotationFlags, AnnotationRecord, CorrelationTable, Flag,
    ScoredItem, Unanimity,
};

/// Floor applied to probabilities before taking log ratios.
pub const PROB_FLOOR: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("context of {0} positions is too short for a span")]
    ContextTooShort(usize),
    #[error("scorer failed: {0}")]
    ScorerError(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("article {article} has {count} annotations, expected 3")]
    InvalidAnnotationSet { article: String, count: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Answer types predicted by a joint QA model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Undetermined = 0,
    LongAnswer = 1,
    ShortAnswer = 2,
    YesNo = 3,
}

/// Start/end distributions over positions `0..=n`, where 0 is the
/// no-answer sentinel and `1..=n` are context tokens, plus type probabilities
/// indexed by [`AnswerType`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaOutput {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub type_probs: [f64; 4],
}

impl QaOutput {
    /// Number of context positions (excluding the sentinel).
    pub fn n(&self) -> usize {
        self.p_start.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), QaError> {
        if self.p_start.len() != self.p_end.len() || self.p_start.is_empty() {
            return Err(QaError::ScorerError(format!(
                "start/end lengths {} and {}",
                self.p_start.len(),
                self.p_end.len()
            )));
        }
        for (name, v) in [
            ("p_start", self.p_start.as_slice()),
            ("p_end", self.p_end.as_slice()),
            ("type_probs", self.type_probs.as_slice()),
        ] {
            if v.iter().any(|p| !(*p >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
                return Err(QaError::ScorerError(format!("{name} is not a probability vector")));
            }
        }
        Ok(())
    }

    pub fn p_long(&self) -> f64 {
        self.type_probs[AnswerType::LongAnswer as usize]
    }

    pub fn p_short(&self) -> f64 {
        self.type_probs[AnswerType::ShortAnswer as usize]
    }

    /// Uniform start/end over `n + 1` positions and uniform types.
    pub fn uniform(n: usize) -> Self {
        Self {
            p_start: vec![1.0 / (n + 1) as f64; n + 1],
            p_end: vec![1.0 / (n + 1) as f64; n + 1],
            type_probs: [0.25; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub s_ans: f64,
    pub s_gra: f64,
    pub best_span: (usize, usize),
    pub p_ans: f64,
    pub p_no_ans: f64,
}

/// Span `(i, j)`, `1 <= i < j <= n`, maximizing `p_start(i) p_end(j)`, with
/// ties to the lexicographically smallest pair, and the maximized product.
pub fn best_span(out: &QaOutput) -> Result<(usize, usize, f64), QaError> {
    let n = out.n();
    if n < 2 || out.p_end.len() != n + 1 {
        return Err(QaError::ContextTooShort(n));
    }
    let mut start = 1;
    let mut best = (1, 2, out.p_start[1] * out.p_end[2]);
    for j in 2..=n {
        if out.p_start[j - 1] > out.p_start[start] {
            start = j - 1;
        }
        let p = out.p_start[start] * out.p_end[j];
        if p > best.2 || (p == best.2 && start < best.0) {
            best = (start, j, p);
        }
    }
    Ok(best)
}

/// `p_start(0) * p_end(0)`.
pub fn no_answer_prob(out: &QaOutput) -> f64 {
    out.p_start[0] * out.p_end[0]
}

fn log_ratio(a: f64, b: f64) -> f64 {
    a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()
}

/// `ln(p_ans / p_no_ans)` with both floored at [`PROB_FLOOR`].
pub fn answerability(p_ans: f64, p_no_ans: f64) -> f64 {
    log_ratio(p_ans, p_no_ans)
}

/// `ln(p_long / p_short)` with both floored at [`PROB_FLOOR`].
pub fn granularity(p_long: f64, p_short: f64) -> f64 {
    log_ratio(p_long, p_short)
}

/// Answers a question against a context.
pub trait QaScorer {
    fn score(&self, question: &[TokenId], context: &[TokenId]) -> Result<QaOutput, QaError>;
}

pub fn scores_from_output(out: &QaOutput) -> Result<QaScores, QaError> {
    out.validate()?;
    let (i, j, p_ans) = best_span(out)?;
    let p_no_ans = no_answer_prob(out);
    Ok(QaScores {
        s_ans: answerability(p_ans, p_no_ans),
        s_gra: granularity(out.p_long(), out.p_short()),
        best_span: (i, j),
        p_ans,
        p_no_ans,
    })
}

pub fn qa_score(scorer: &dyn QaScorer, question: &[TokenId], context: &[TokenId]) -> Result<QaScores, QaError> {
    let out = scorer.score(question, context)?;
    if out.n() != context.len() {
        return Err(QaError::ScorerError(format!(
            "scorer returned {} positions for {} context tokens",
            out.n(),
            context.len()
        )));
    }
    scores_from_output(&out)
}

/// Deterministic stand-in scorer. With `J` the Jaccard overlap of question
/// and context unigram sets, both sentinel entries get `1 - J`; the remaining
/// mass `J` goes to the start and end of the longest run shared with the
/// question. Type probabilities are uniform.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapScorer;

/// Earliest longest contiguous run of `context` that also occurs in
/// `question`, as `(start, len)`.
fn longest_common_run(question: &[TokenId], context: &[TokenId]) -> (usize, usize) {
    let mut best = (0, 0);
    let mut prev = vec![0usize; question.len() + 1];
    for (i, c) in context.iter().enumerate() {
        let mut cur = vec![0usize; question.len() + 1];
        for (j, q) in question.iter().enumerate() {
            if c == q {
                cur[j + 1] = prev[j] + 1;
                if cur[j + 1] > best.1 {
                    best = (i + 1 - cur[j + 1], cur[j + 1]);
                }
            }
        }
        prev = cur;
    }
    best
}

impl QaScorer for LexicalOverlapScorer {
    fn score(&self, question: &[TokenId], context: &[TokenId]) -> Result<QaOutput, QaError> {
        let n = context.len();
        if n < 2 {
            return Err(QaError::ContextTooShort(n));
        }
        let qs: HashSet<_> = question.iter().collect();
        let cs: HashSet<_> = context.iter().collect();
        let union = qs.union(&cs).count();
        let jaccard = if union == 0 {
            0.0
        } else {
            qs.intersection(&cs).count() as f64 / union as f64
        };
        let mut p_start = vec![0.0; n + 1];
        let mut p_end = vec![0.0; n + 1];
        p_start[0] = 1.0 - jaccard;
        p_end[0] = 1.0 - jaccard;
        if jaccard > 0.0 {
            let (s, len) = longest_common_run(question, context);
            // 1-based positions with start < end.
            let start = (s + 1).min(n - 1);
            let end = (s + len).max(start + 1);
            p_start[start] += jaccard;
            p_end[end] += jaccard;
        }
        Ok(QaOutput {
            p_start,
            p_end,
            type_probs: [0.25; 4],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(out: &QaOutput) -> (usize, usize, f64) {
        let n = out.n();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 1..=n {
            for j in i + 1..=n {
                let p = out.p_start[i] * out.p_end[j];
                if p > best.2 {
                    best = (i, j, p);
                }
            }
        }
        best
    }

    #[test]
    fn span_examples() {
        let mut out = QaOutput::uniform(6);
        out.p_start = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        out.p_end = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(best_span(&out).unwrap(), (2, 5, 1.0));

        let u = QaOutput::uniform(5);
        let (i, j, p) = best_span(&u).unwrap();
        assert_eq!((i, j), (1, 2));
        assert!((p - 1.0 / 36.0).abs() < 1e-15);
        assert!((no_answer_prob(&u) - 1.0 / 36.0).abs() < 1e-15);

        let small = QaOutput {
            p_start: vec![0.1, 0.6, 0.3],
            p_end: vec![0.1, 0.2, 0.7],
            type_probs: [0.25; 4],
        };
        let (i, j, p) = best_span(&small).unwrap();
        assert_eq!((i, j), (1, 2));
        assert!((p - 0.42).abs() < 1e-12);
        assert!(matches!(best_span(&QaOutput::uniform(1)), Err(QaError::ContextTooShort(1))));
    }

    #[test]
    fn log_ratio_examples() {
        assert_eq!(answerability(0.3, 0.3), 0.0);
        assert!((answerability(0.9, 0.1) - 9f64.ln()).abs() < 1e-12);
        assert!((granularity(0.1, 0.9) + 9f64.ln()).abs() < 1e-12);
        assert!((answerability(0.0, 1.0) - PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn sentinel_extremes() {
        let mut out = QaOutput::uniform(3);
        out.p_start = vec![1.0, 0.0, 0.0, 0.0];
        out.p_end = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(no_answer_prob(&out), 1.0);
        out.p_end = vec![0.0, 0.5, 0.5, 0.0];
        assert_eq!(no_answer_prob(&out), 0.0);
    }

    struct Fixed(QaOutput);
    impl QaScorer for Fixed {
        fn score(&self, _: &[TokenId], _: &[TokenId]) -> Result<QaOutput, QaError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn uniform_stub_scores_zero() {
        let s = qa_score(&Fixed(QaOutput::uniform(4)), &[5, 6], &[7, 8, 9, 10]).unwrap();
        assert!(s.s_ans.abs() < 1e-12);
        assert_eq!(s.s_gra, 0.0);
        assert!(qa_score(&Fixed(QaOutput::uniform(3)), &[5], &[7, 8, 9, 10]).is_err());
    }

    #[test]
    fn lexical_stub_behaviour() {
        let ctx = [10, 11, 12, 13, 14];
        let none = qa_score(&LexicalOverlapScorer, &[20, 21], &ctx).unwrap();
        assert!(none.s_ans < 0.0);
        let all = qa_score(&LexicalOverlapScorer, &ctx, &ctx).unwrap();
        assert!(all.s_ans > 0.0);
        let part = qa_score(&LexicalOverlapScorer, &[12, 13, 30], &ctx).unwrap();
        assert_eq!(part.best_span, (3, 4));
        let one = qa_score(&LexicalOverlapScorer, &[14], &ctx).unwrap();
        assert!(one.best_span.0 < one.best_span.1 && one.best_span.1 <= 5);
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]
        #[test]
        fn best_span_matches_brute_force(
            (a, b) in (3usize..32).prop_flat_map(|len| (prob_vec(len), prob_vec(len)))
        ) {
            let out = QaOutput { p_start: a, p_end: b, type_probs: [0.25; 4] };
            let fast = best_span(&out).unwrap();
            let slow = brute(&out);
            prop_assert_eq!((fast.0, fast.1), (slow.0, slow.1));
            prop_assert_eq!(fast.2, slow.2);
        }

        #[test]
        fn answerability_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assert_eq!(answerability(a, b), -answerability(b, a));
        }

        #[test]
        fn stub_spans_in_bounds(q in proptest::collection::vec(4u32..12, 0..8), c in proptest::collection::vec(4u32..12, 2..20)) {
            let s = qa_score(&LexicalOverlapScorer, &q, &c).unwrap();
            prop_assert!(1 <= s.best_span.0 && s.best_span.0 < s.best_span.1 && s.best_span.1 <= c.len());
        }
    }
}
