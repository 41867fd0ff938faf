//! Reference-based generation metrics: corpus BLEU, ROUGE-L, and an
//! exact-match-only METEOR variant.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_THETA: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid metric input: {0}")]
    InvalidInput(String),
}

/// Lowercased whitespace tokens.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU: clipped n-gram counts and lengths are summed over the
/// corpus, then combined as `BP * exp(mean_n ln p_n)` for `n = 1..=max_n`.
/// The effective reference length per example is the closest reference
/// length, ties to the shorter.
pub fn bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::InvalidInput("no candidates".into()));
    }
    if candidates.len() != references.len() {
        return Err(MetricError::InvalidInput(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(MetricError::InvalidInput("max_n must be positive".into()));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(MetricError::InvalidInput(format!("example {i} has no references")));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty references");
        for n in 1..=max_n {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &counts {
                matched[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_mean = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_mean.exp())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + b^2) P R / (R + b^2 P)` with `b = 1.2`, maximized over references.
pub fn rouge_l<T: Eq>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    references
        .iter()
        .map(|r| {
            let lcs = lcs_len(candidate, r);
            if lcs == 0 {
                return 0.0;
            }
            let p = lcs as f64 / candidate.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Exact-match alignment built by repeatedly linking the longest run of
/// unaligned tokens common to both sides (earliest positions first). Returns
/// `(matches, chunks)`.
fn align<T: Eq>(cand: &[T], reference: &[T]) -> (usize, usize) {
    let mut used_c = vec![false; cand.len()];
    let mut used_r = vec![false; reference.len()];
    let (mut matches, mut chunks) = (0, 0);
    loop {
        let mut best = (0, 0, 0);
        for i in 0..cand.len() {
            for j in 0..reference.len() {
                let mut k = 0;
                while i + k < cand.len()
                    && j + k < reference.len()
                    && !used_c[i + k]
                    && !used_r[j + k]
                    && cand[i + k] == reference[j + k]
                {
                    k += 1;
                }
                if k > best.0 {
                    best = (k, i, j);
                }
            }
        }
        let (k, i, j) = best;
        if k == 0 {
            return (matches, chunks);
        }
        used_c[i..i + k].iter_mut().for_each(|u| *u = true);
        used_r[j..j + k].iter_mut().for_each(|u| *u = true);
        matches += k;
        chunks += 1;
    }
}

/// `F_mean * (1 - 0.5 (chunks / m)^3)` with `F_mean = P R / (0.9 P + 0.1 R)`
/// over an exact unigram alignment; no stemming or synonyms.
pub fn meteor_lite<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let (m, chunks) = align(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_THETA);
    f_mean * (1.0 - penalty)
}

/// Best [`meteor_lite`] over several references.
pub fn meteor_lite_multi<T: Eq>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    references
        .iter()
        .map(|r| meteor_lite(candidate, r))
        .fold(0.0, f64::max)
}

/// Corpus scores in `[0, 1]`; METEOR here is the exact-match variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
    pub n: usize,
}

impl MetricReport {
    /// The same scores on the 0-100 scale.
    pub fn percent(&self) -> Self {
        Self {
            bleu1: 100.0 * self.bleu1,
            bleu4: 100.0 * self.bleu4,
            meteor_lite: 100.0 * self.meteor_lite,
            rouge_l: 100.0 * self.rouge_l,
            n: self.n,
        }
    }
}

/// Per-example sentence scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub bleu1: f64,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
}

pub fn example_scores<T: Hash + Eq>(candidate: &[T], references: &[Vec<T>]) -> Result<ExampleScores, MetricError>
where
    T: Clone,
{
    let cands = [candidate.to_vec()];
    let refs = [references.to_vec()];
    Ok(ExampleScores {
        bleu1: bleu(&cands, &refs, 1)?,
        bleu4: bleu(&cands, &refs, 4)?,
        meteor_lite: meteor_lite_multi(candidate, references),
        rouge_l: rouge_l(candidate, references),
    })
}

/// Corpus BLEU plus example-averaged ROUGE-L and METEOR-lite.
pub fn corpus_report<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<MetricReport, MetricError> {
    let bleu1 = bleu(candidates, references, 1)?;
    let bleu4 = bleu(candidates, references, 4)?;
    let n = candidates.len();
    let mean = |f: &dyn Fn(&Vec<T>, &Vec<Vec<T>>) -> f64| {
        candidates.iter().zip(references).map(|(c, r)| f(c, r)).sum::<f64>() / n as f64
    };
    Ok(MetricReport {
        bleu1,
        bleu4,
        meteor_lite: mean(&|c, r| meteor_lite_multi(c, r)),
        rouge_l: mean(&|c, r| rouge_l(c, r)),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_examples() {
        let c = vec![toks("what is the capital of france")];
        let r = vec![vec![toks("what is the capital of france")]];
        assert!((bleu(&c, &r, 4).unwrap() - 1.0).abs() < 1e-12);
        let z = bleu(&[toks("a b")], &[vec![toks("c d")]], 4).unwrap();
        assert_eq!(z, 0.0);
        let b1 = bleu(&[toks("the the the")], &[vec![toks("the cat")]], 1).unwrap();
        assert!((b1 - 1.0 / 3.0).abs() < 1e-12);
        assert!(bleu::<&str>(&[], &[], 4).is_err());
    }

    #[test]
    fn bleu_brevity_penalty() {
        let b = bleu(&[toks("a b")], &[vec![toks("a b c d")]], 1).unwrap();
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &[toks("a b c")]), 1.0);
        assert_eq!(rouge_l(&toks("a b c"), &[toks("d e")]), 0.0);
        let f = rouge_l(&toks("a c e"), &[toks("a b c d e")]);
        let b2: f64 = 1.44;
        assert!((f - (1.0 + b2) * 0.6 / (0.6 + b2)).abs() < 1e-12);
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor_lite(&toks("a"), &toks("a")), 0.5);
        let long = toks("a b c d e f g h i j");
        assert!((meteor_lite(&long, &long) - (1.0 - 0.5 * 1e-3)).abs() < 1e-12);
        assert_eq!(meteor_lite(&toks("a b"), &toks("c d")), 0.0);
        let scrambled = toks("j a h c e g b i d f");
        assert!(meteor_lite(&scrambled, &long) < meteor_lite(&long, &long));
    }

    #[test]
    fn report_scales() {
        let c = vec![toks("x y z w")];
        let r = vec![vec![toks("x y z w")]];
        let rep = corpus_report(&c, &r).unwrap().percent();
        assert!((rep.bleu4 - 100.0).abs() < 1e-9);
        assert_eq!(rep.n, 1);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-e]", 1..10)
    }

    proptest! {
        #[test]
        fn bleu1_dominates_bleu4(pairs in proptest::collection::vec((sentence(), sentence()), 1..6)) {
            let c: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
            let r: Vec<_> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
            prop_assert!(bleu(&c, &r, 1).unwrap() + 1e-12 >= bleu(&c, &r, 4).unwrap());
        }

        #[test]
        fn order_invariant(pairs in proptest::collection::vec((sentence(), sentence()), 1..6)) {
            let c: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
            let r: Vec<_> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
            let a = corpus_report(&c, &r).unwrap();
            let (mut c2, mut r2) = (c.clone(), r.clone());
            c2.reverse();
            r2.reverse();
            let b = corpus_report(&c2, &r2).unwrap();
            prop_assert!((a.bleu4 - b.bleu4).abs() < 1e-12);
            prop_assert!((a.rouge_l - b.rouge_l).abs() < 1e-12);
            prop_assert!((a.meteor_lite - b.meteor_lite).abs() < 1e-12);
        }

        #[test]
        fn scores_bounded(c in sentence(), r in sentence()) {
            let s = example_scores(&c, &[r]).unwrap();
            for v in [s.bleu1, s.bleu4, s.meteor_lite, s.rouge_l] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
