//! Preparation of answer-tagged examples from NQ-style records and news articles.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{TokenId, Vocab};

pub const MAX_CONTEXT_TOKENS: usize = 500;
pub const MAX_QUESTION_TOKENS: usize = 50;
pub const MAX_NEWS_TOKENS: usize = 490;

const OPEN_MARKER: &str = "[ ";
const CLOSE_MARKER: &str = " ]";

/// News datelines end at this source tag.
const DATELINE_TAG: &str = "(CNN)";
/// Datelines longer than this are treated as body text.
const MAX_DATELINE_BYTES: usize = 160;
const HIGHLIGHT_LINE: &str = "@highlight";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("invalid answer spans: {0}")]
    InvalidSpans(String),
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// One question with its long-answer paragraph and optional short spans.
/// Span offsets count characters (Unicode scalar values) of `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub question: String,
    pub context: String,
    #[serde(default)]
    pub short_spans: Vec<(usize, usize)>,
    #[serde(rename = "p_tag")]
    pub starts_with_paragraph_tag: bool,
}

/// News input line: `{"id", "article", "highlights"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsRecord {
    pub id: String,
    pub article: String,
    #[serde(default)]
    pub highlights: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerKind {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub id: String,
    pub context_ids: Vec<TokenId>,
    pub type_ids: Vec<u8>,
    pub question_ids: Vec<TokenId>,
    pub answer_kind: AnswerKind,
    /// Tokenized highlights of a news article, used as an alternative QA context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight_ids: Option<Vec<TokenId>>,
}

impl PreparedExample {
    pub fn answer_tokens(&self) -> usize {
        self.type_ids.iter().filter(|&&t| t == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rejection {
    ContextTooLong,
    QuestionTooLong,
    NoParagraphTag,
    NoAnswerTokens,
    Empty,
    TooLong,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ContextTooLong => "context_too_long",
            Self::QuestionTooLong => "question_too_long",
            Self::NoParagraphTag => "no_paragraph_tag",
            Self::NoAnswerTokens => "no_answer_tokens",
            Self::Empty => "empty",
            Self::TooLong => "too_long",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Accepted(PreparedExample),
    Rejected(Rejection),
}

impl Outcome {
    pub fn accepted(self) -> Option<PreparedExample> {
        match self {
            Self::Accepted(ex) => Some(ex),
            Self::Rejected(_) => None,
        }
    }
}

/// Title and context joined with answer markers inserted. `markers` holds the
/// byte ranges of every inserted marker in `text`, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracketed {
    pub text: String,
    pub markers: Vec<Range<usize>>,
    pub kind: AnswerKind,
}

impl Bracketed {
    /// The text with markers removed, paired with the byte ranges of the
    /// tagged regions in that stripped text.
    pub fn strip(&self) -> (String, Vec<Range<usize>>) {
        let mut out = String::with_capacity(self.text.len());
        let mut regions = Vec::new();
        let mut cursor = 0;
        for (k, m) in self.markers.iter().enumerate() {
            out.push_str(&self.text[cursor..m.start]);
            if k % 2 == 0 {
                regions.push(out.len()..out.len());
            } else if let Some(r) = regions.last_mut() {
                r.end = out.len();
            }
            cursor = m.end;
        }
        out.push_str(&self.text[cursor..]);
        (out, regions)
    }
}

/// Removes the markers inserted by [`bracket_answers`].
pub fn strip_markers(bracketed: &Bracketed) -> String {
    bracketed.strip().0
}

/// `title` and `context` joined by a single space (the title is dropped when empty).
pub fn joined_source(title: &str, context: &str) -> String {
    if title.is_empty() {
        context.to_string()
    } else {
        format!("{title} {context}")
    }
}

fn validated_spans(record: &RawRecord) -> Result<Vec<(usize, usize)>, CorpusError> {
    if record.context.is_empty() {
        return Err(CorpusError::InvalidSpans("empty context".into()));
    }
    let n_chars = record.context.chars().count();
    let mut spans = record.short_spans.clone();
    spans.sort_unstable();
    for &(s, e) in &spans {
        if s >= e || e > n_chars {
            return Err(CorpusError::InvalidSpans(format!(
                "span ({s}, {e}) invalid for context of {n_chars} chars"
            )));
        }
    }
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CorpusError::InvalidSpans(format!(
                "spans ({}, {}) and ({}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    Ok(spans)
}

/// Prepends the title and wraps each short span, or the whole long answer when
/// there are none, in `[ ... ]` markers.
pub fn bracket_answers(record: &RawRecord) -> Result<Bracketed, CorpusError> {
    let spans = validated_spans(record)?;
    let ctx = &record.context;
    let mut byte_at: Vec<usize> = ctx.char_indices().map(|(b, _)| b).collect();
    byte_at.push(ctx.len());

    let mut text = String::with_capacity(ctx.len() + record.title.len() + 4 * spans.len() + 5);
    if !record.title.is_empty() {
        text.push_str(&record.title);
        text.push(' ');
    }
    let mut markers = Vec::new();
    let mut push_marker = |text: &mut String, m: &str| {
        let start = text.len();
        text.push_str(m);
        markers.push(start..text.len());
    };
    let kind = if spans.is_empty() {
        push_marker(&mut text, OPEN_MARKER);
        text.push_str(ctx);
        push_marker(&mut text, CLOSE_MARKER);
        AnswerKind::Long
    } else {
        let mut cursor = 0;
        for &(s, e) in &spans {
            text.push_str(&ctx[cursor..byte_at[s]]);
            push_marker(&mut text, OPEN_MARKER);
            text.push_str(&ctx[byte_at[s]..byte_at[e]]);
            push_marker(&mut text, CLOSE_MARKER);
            cursor = byte_at[e];
        }
        text.push_str(&ctx[cursor..]);
        AnswerKind::Short
    };
    Ok(Bracketed { text, markers, kind })
}

/// Tokenizes `text`, tagging each token that overlaps a region with 1.
fn tag_tokens(vocab: &Vocab, text: &str, regions: &[Range<usize>]) -> (Vec<TokenId>, Vec<u8>) {
    vocab
        .encode_with_offsets(text)
        .into_iter()
        .map(|(id, span)| {
            let tagged = regions.iter().any(|r| span.start < r.end && r.start < span.end);
            (id, u8::from(tagged))
        })
        .unzip()
}

/// Tokenizes a record into an answer-tagged example. Title tokens are tagged 0
/// for both answer kinds.
pub fn prepare_example(record: &RawRecord, vocab: &Vocab) -> Result<Outcome, CorpusError> {
    let bracketed = bracket_answers(record)?;
    if !record.starts_with_paragraph_tag {
        return Ok(Outcome::Rejected(Rejection::NoParagraphTag));
    }
    let (text, regions) = bracketed.strip();
    let (context_ids, type_ids) = tag_tokens(vocab, &text, &regions);
    if context_ids.len() > MAX_CONTEXT_TOKENS {
        return Ok(Outcome::Rejected(Rejection::ContextTooLong));
    }
    let question_ids = vocab.encode(&record.question);
    if question_ids.len() > MAX_QUESTION_TOKENS {
        return Ok(Outcome::Rejected(Rejection::QuestionTooLong));
    }
    if !type_ids.contains(&1) {
        return Ok(Outcome::Rejected(Rejection::NoAnswerTokens));
    }
    Ok(Outcome::Accepted(PreparedExample {
        id: record.id.clone(),
        context_ids,
        type_ids,
        question_ids,
        answer_kind: bracketed.kind,
        highlight_ids: None,
    }))
}

/// Splits an article at its first `@highlight` line into body and highlight sentences.
pub fn split_highlights(article: &str) -> (&str, Vec<&str>) {
    let mut offset = 0;
    for line in article.split_inclusive('\n') {
        if line.trim() == HIGHLIGHT_LINE {
            let highlights = article[offset..]
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && *l != HIGHLIGHT_LINE)
                .collect();
            return (&article[..offset], highlights);
        }
        offset += line.len();
    }
    (article, Vec::new())
}

/// Removes a leading dateline ending in `(CNN)` together with a following
/// `--` or `-` separator.
pub fn strip_dateline(body: &str) -> &str {
    let trimmed = body.trim_start();
    let Some(pos) = trimmed.find(DATELINE_TAG) else {
        return trimmed;
    };
    if pos > MAX_DATELINE_BYTES || trimmed[..pos].contains('\n') {
        return trimmed;
    }
    let rest = trimmed[pos + DATELINE_TAG.len()..].trim_start();
    let rest = rest
        .strip_prefix("--")
        .or_else(|| rest.strip_prefix('\u{2014}'))
        .or_else(|| rest.strip_prefix('-'))
        .unwrap_or(rest);
    rest.trim_start()
}

/// Cleans a news article into a long-answer example with an empty question.
/// Highlights come either from an `@highlight` block in the article or from
/// `highlights`.
pub fn prepare_news(id: &str, article: &str, highlights: Option<&str>, vocab: &Vocab) -> Outcome {
    let (body, inline) = split_highlights(article);
    let body = strip_dateline(body).trim_end();
    if body.is_empty() {
        return Outcome::Rejected(Rejection::Empty);
    }
    let context_ids = vocab.encode(body);
    if context_ids.is_empty() {
        return Outcome::Rejected(Rejection::Empty);
    }
    if context_ids.len() > MAX_NEWS_TOKENS {
        return Outcome::Rejected(Rejection::TooLong);
    }
    let highlight_text = match highlights {
        Some(h) => Some(h.to_string()),
        None if !inline.is_empty() => Some(inline.join(" ")),
        None => None,
    };
    Outcome::Accepted(PreparedExample {
        id: id.to_string(),
        type_ids: vec![1; context_ids.len()],
        context_ids,
        question_ids: Vec::new(),
        answer_kind: AnswerKind::Long,
        highlight_ids: highlight_text.map(|h| vocab.encode(&h)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PreparedExample>,
    pub dev: Vec<PreparedExample>,
    pub seed: u64,
}

/// Number of training examples for `n` items at `ratio`: `ceil(ratio * n)`,
/// computed with a small tolerance so exact products are not rounded up.
pub fn train_count(n: usize, ratio: f64) -> usize {
    (((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded shuffle followed by a `ceil(ratio * n)` / rest partition.
pub fn split_dataset(examples: Vec<PreparedExample>, ratio: f64, seed: u64) -> Result<DatasetSplit, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    if examples.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut examples = examples;
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev = examples.split_off(train_count(examples.len(), ratio));
    Ok(DatasetSplit {
        train: examples,
        dev,
        seed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_examples: usize,
    pub n_unique_contexts: usize,
    pub questions_per_context_mean: f64,
    pub questions_per_context_max: usize,
}

pub fn dataset_stats(examples: &[PreparedExample]) -> DatasetStats {
    if examples.is_empty() {
        return DatasetStats::default();
    }
    let mut counts: HashMap<&[TokenId], usize> = HashMap::new();
    for ex in examples {
        *counts.entry(&ex.context_ids).or_default() += 1;
    }
    DatasetStats {
        n_examples: examples.len(),
        n_unique_contexts: counts.len(),
        questions_per_context_mean: examples.len() as f64 / counts.len() as f64,
        questions_per_context_max: counts.values().copied().max().unwrap_or(0),
    }
}

/// Drops examples whose context token sequence also occurs in `seen`.
pub fn filter_overlapping_contexts(examples: Vec<PreparedExample>, seen: &[PreparedExample]) -> Vec<PreparedExample> {
    let seen: HashSet<&[TokenId]> = seen.iter().map(|e| e.context_ids.as_slice()).collect();
    examples
        .into_iter()
        .filter(|e| !seen.contains(e.context_ids.as_slice()))
        .collect()
}

/// Count of rejections per reason, keyed by the reason string.
pub fn rejection_histogram<'a>(rejections: impl IntoIterator<Item = &'a Rejection>) -> BTreeMap<&'static str, usize> {
    let mut hist = BTreeMap::new();
    for r in rejections {
        *hist.entry(r.as_str()).or_default() += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::train_vocab;
    use proptest::prelude::*;

    const UN_TITLE: &str = "President of the United Nations General Assembly";
    const UN_CONTEXT: &str = "Miroslav Lajčák of Slovakia has been elected as President of the 72nd session of the United Nations General Assembly.";
    const JDK_TITLE: &str = "Java Development Kit";
    const JDK_CONTEXT: &str = "The Java Development Kit (JDK) is an implementation of either one of the Java Platform, Standard Edition, Java Platform, Enterprise Edition, or Java Platform, Micro Edition platforms released by Oracle Corporation.";

    fn record(title: &str, context: &str, spans: Vec<(usize, usize)>) -> RawRecord {
        RawRecord {
            id: "r".into(),
            title: title.into(),
            question: "who is the president".into(),
            context: context.into(),
            short_spans: spans,
            starts_with_paragraph_tag: true,
        }
    }

    fn vocab() -> Vocab {
        train_vocab(&[UN_TITLE, UN_CONTEXT, JDK_TITLE, JDK_CONTEXT, "who is the president"], 300).unwrap()
    }

    fn decode_tagged(v: &Vocab, ex: &PreparedExample) -> String {
        let ids: Vec<TokenId> = ex
            .context_ids
            .iter()
            .zip(&ex.type_ids)
            .filter(|(_, &t)| t == 1)
            .map(|(&id, _)| id)
            .collect();
        v.decode(&ids).unwrap()
    }

    #[test]
    fn short_span_is_bracketed_after_title() {
        let r = record(UN_TITLE, UN_CONTEXT, vec![(0, 27)]);
        let b = bracket_answers(&r).unwrap();
        assert!(b
            .text
            .starts_with("President of the United Nations General Assembly [ Miroslav Lajčák of Slovakia ] has been elected"));
        assert_eq!(strip_markers(&b), joined_source(UN_TITLE, UN_CONTEXT));
    }

    #[test]
    fn long_answer_wraps_whole_context() {
        let b = bracket_answers(&record(JDK_TITLE, JDK_CONTEXT, vec![])).unwrap();
        assert_eq!(b.text, format!("{JDK_TITLE} [ {JDK_CONTEXT} ]"));
        assert_eq!(b.kind, AnswerKind::Long);
    }

    #[test]
    fn empty_context_and_overlaps_rejected() {
        assert!(matches!(bracket_answers(&record("t", "", vec![])), Err(CorpusError::InvalidSpans(_))));
        assert!(matches!(
            bracket_answers(&record("t", "abcdef", vec![(0, 3), (2, 4)])),
            Err(CorpusError::InvalidSpans(_))
        ));
        assert!(matches!(bracket_answers(&record("t", "abc", vec![(1, 9)])), Err(CorpusError::InvalidSpans(_))));
    }

    #[test]
    fn short_answer_tags_exactly_the_span() {
        let v = vocab();
        let ex = prepare_example(&record(UN_TITLE, UN_CONTEXT, vec![(0, 27)]), &v)
            .unwrap()
            .accepted()
            .unwrap();
        assert_eq!(ex.answer_kind, AnswerKind::Short);
        assert_eq!(decode_tagged(&v, &ex), "miroslav lajčák of slovakia");
    }

    #[test]
    fn long_answer_tags_context_not_title() {
        let v = vocab();
        let ex = prepare_example(&record(JDK_TITLE, JDK_CONTEXT, vec![]), &v)
            .unwrap()
            .accepted()
            .unwrap();
        assert_eq!(ex.answer_kind, AnswerKind::Long);
        let title_len = v.encode(JDK_TITLE).len();
        assert!(ex.type_ids[..title_len].iter().all(|&t| t == 0));
        assert!(ex.type_ids[title_len..].iter().all(|&t| t == 1));
        assert_eq!(decode_tagged(&v, &ex), JDK_CONTEXT.to_lowercase());
    }

    #[test]
    fn length_limits_are_inclusive() {
        let v = train_vocab(&["a b"], 7).unwrap();
        let ctx = |n: usize| vec!["a"; n].join(" ");
        let at = prepare_example(&record("", &ctx(500), vec![]), &v).unwrap();
        assert!(matches!(at, Outcome::Accepted(ref e) if e.context_ids.len() == 500));
        let over = prepare_example(&record("", &ctx(501), vec![]), &v).unwrap();
        assert_eq!(over, Outcome::Rejected(Rejection::ContextTooLong));

        let mut q = record("", "a", vec![]);
        q.question = ctx(50);
        assert!(matches!(prepare_example(&q, &v).unwrap(), Outcome::Accepted(_)));
        q.question = ctx(51);
        assert_eq!(prepare_example(&q, &v).unwrap(), Outcome::Rejected(Rejection::QuestionTooLong));

        let mut p = record("", "a", vec![]);
        p.starts_with_paragraph_tag = false;
        assert_eq!(prepare_example(&p, &v).unwrap(), Outcome::Rejected(Rejection::NoParagraphTag));
    }

    #[test]
    fn news_dateline_and_highlights() {
        let v = train_vocab(&["body text. a b c more"], 40).unwrap();
        let ex = prepare_news("n", "NEW DELHI, India (CNN) -- Body text.", None, &v)
            .accepted()
            .unwrap();
        assert_eq!(v.decode(&ex.context_ids).unwrap(), "body text.");
        assert!(ex.type_ids.iter().all(|&t| t == 1));
        assert!(ex.question_ids.is_empty());

        assert_eq!(strip_dateline("Body text."), "Body text.");
        let (body, hl) = split_highlights("Body text.\n\n@highlight\n\nMore\n\n@highlight\n\nA b");
        assert_eq!(body.trim(), "Body text.");
        assert_eq!(hl, vec!["More", "A b"]);
        assert_eq!(prepare_news("n", "(CNN) -- \n@highlight\nx", None, &v), Outcome::Rejected(Rejection::Empty));
    }

    #[test]
    fn news_length_boundary() {
        let v = train_vocab(&["a b"], 7).unwrap();
        let art = |n: usize| vec!["a"; n].join(" ");
        assert!(matches!(prepare_news("n", &art(490), None, &v), Outcome::Accepted(_)));
        assert_eq!(prepare_news("n", &art(491), None, &v), Outcome::Rejected(Rejection::TooLong));
    }

    fn dummy(i: usize, ctx: u32) -> PreparedExample {
        PreparedExample {
            id: format!("e{i}"),
            context_ids: vec![ctx],
            type_ids: vec![1],
            question_ids: vec![5],
            answer_kind: AnswerKind::Long,
            highlight_ids: None,
        }
    }

    #[test]
    fn split_counts_and_determinism() {
        let exs: Vec<_> = (0..10).map(|i| dummy(i, i as u32)).collect();
        let a = split_dataset(exs.clone(), 0.9, 7).unwrap();
        assert_eq!((a.train.len(), a.dev.len()), (9, 1));
        assert_eq!(a, split_dataset(exs.clone(), 0.9, 7).unwrap());
        assert!(matches!(split_dataset(exs.clone(), 1.0, 7), Err(CorpusError::InvalidRatio(_))));
        assert!(matches!(split_dataset(vec![], 0.5, 7), Err(CorpusError::EmptyDataset)));
        assert_eq!(train_count(110_865, 0.9), 99_779);
    }

    #[test]
    fn stats_count_contexts() {
        assert_eq!(dataset_stats(&[]), DatasetStats::default());
        let s = dataset_stats(&[dummy(0, 1), dummy(1, 1), dummy(2, 2)]);
        assert_eq!(s.n_unique_contexts, 2);
        assert_eq!(s.questions_per_context_mean, 1.5);
        assert_eq!(s.questions_per_context_max, 2);
    }

    proptest! {
        #[test]
        fn markers_round_trip_and_runs(
            words in proptest::collection::vec("[a-z]{1,6}", 3..30),
            picks in proptest::collection::vec(any::<bool>(), 30),
        ) {
            let context = words.join(" ");
            let mut spans = Vec::new();
            let mut pos = 0;
            for (i, w) in words.iter().enumerate() {
                let prev_picked = i > 0 && picks[i - 1];
                if picks[i] && !prev_picked {
                    spans.push((pos, pos + w.len()));
                }
                pos += w.len() + 1;
            }
            let r = record("some title", &context, spans.clone());
            let b = bracket_answers(&r).unwrap();
            prop_assert_eq!(strip_markers(&b), joined_source("some title", &context));

            let v = train_vocab(&[context.as_str(), "some title"], 60).unwrap();
            let ex = prepare_example(&r, &v).unwrap().accepted().unwrap();
            let runs = ex.type_ids.windows(2).filter(|w| w[0] == 0 && w[1] == 1).count()
                + usize::from(ex.type_ids[0] == 1);
            let expected = if spans.is_empty() { 1 } else { spans.len() };
            prop_assert_eq!(runs, expected);
        }

        #[test]
        fn split_partitions(n in 1usize..60, seed in any::<u64>(), ratio in 0.05f64..0.95) {
            let exs: Vec<_> = (0..n).map(|i| dummy(i, i as u32)).collect();
            let s = split_dataset(exs, ratio, seed).unwrap();
            let mut ids: Vec<_> = s.train.iter().chain(&s.dev).map(|e| e.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert_eq!(s.train.len(), train_count(n, ratio));
        }
    }
}
