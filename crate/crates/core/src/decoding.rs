//! Beam search, greedy decoding, and nucleus sampling over a stepwise
//! next-token distribution.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BertPgn, EncoderOutput, ModelError};
use crate::textproc::{TokenId, BOS, EOS};

/// Temperatures at or below this decode by argmax.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoding argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that yields a next-token distribution for a BOS-initiated prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, DecodeError>;

    fn bos(&self) -> TokenId {
        BOS
    }

    /// Token that ends a hypothesis; `None` means sequences end only at `max_len`.
    fn eos(&self) -> Option<TokenId> {
        Some(EOS)
    }
}

/// A [`BertPgn`] bound to one encoded context.
pub struct ContextDecoder<'m> {
    model: &'m BertPgn,
    context_ids: Vec<TokenId>,
    encoded: EncoderOutput,
}

impl<'m> ContextDecoder<'m> {
    pub fn new(model: &'m BertPgn, context_ids: &[TokenId], type_ids: &[u8]) -> Result<Self, ModelError> {
        Ok(Self {
            model,
            context_ids: context_ids.to_vec(),
            encoded: model.encode_context(context_ids, type_ids)?,
        })
    }

    /// Longest generation the model's position table allows.
    pub fn max_len(&self) -> usize {
        self.model.config().max_question + 1
    }
}

impl StepModel for ContextDecoder<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        Ok(self.model.decode_step(prefix, &self.encoded, &self.context_ids)?.final_dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Token ids starting with BOS.
    pub ids: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn start(bos: TokenId) -> Self {
        Self {
            ids: vec![bos],
            logprob: 0.0,
            finished: false,
        }
    }

    /// Generated tokens: everything after BOS, without a closing EOS.
    pub fn tokens(&self) -> &[TokenId] {
        let body = &self.ids[1..];
        if self.finished {
            &body[..body.len() - 1]
        } else {
            body
        }
    }

    /// Number of generated tokens, counting EOS.
    pub fn generated(&self) -> usize {
        self.ids.len() - 1
    }

    /// Log probability per generated token (the raw sum when nothing was generated).
    pub fn normalized(&self) -> f64 {
        self.logprob / self.generated().max(1) as f64
    }

    pub fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize {
            self.normalized()
        } else {
            self.logprob
        }
    }

    fn extend(&self, token: TokenId, p: f64, eos: Option<TokenId>) -> Self {
        let mut ids = self.ids.clone();
        ids.push(token);
        Self {
            ids,
            logprob: self.logprob + p.ln(),
            finished: Some(token) == eos,
        }
    }
}

fn check_dist(model: &dyn StepModel, dist: &[f64]) -> Result<(), DecodeError> {
    if dist.len() != model.vocab_size() {
        return Err(DecodeError::InvalidArgument(format!(
            "distribution of length {} for vocabulary {}",
            dist.len(),
            model.vocab_size()
        )));
    }
    Ok(())
}

/// Index of the largest probability; ties go to the lowest id.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

pub fn greedy(model: &dyn StepModel, max_len: usize) -> Result<Hypothesis, DecodeError> {
    let mut hyp = Hypothesis::start(model.bos());
    while !hyp.finished && hyp.generated() < max_len {
        let dist = model.next_distribution(&hyp.ids)?;
        check_dist(model, &dist)?;
        let w = argmax(&dist);
        hyp = hyp.extend(w as TokenId, dist[w], model.eos());
    }
    Ok(hyp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 3,
            max_len: 50,
            length_normalize: true,
        }
    }
}

/// Keeps the `beam` best one-token extensions of the live hypotheses at each
/// step. Extensions ending in EOS leave the beam as finished results.
/// Results are sorted by score, best first.
pub fn beam_search(model: &dyn StepModel, cfg: BeamConfig) -> Result<Vec<Hypothesis>, DecodeError> {
    if cfg.beam == 0 {
        return Err(DecodeError::InvalidArgument("beam must be at least 1".into()));
    }
    let mut live = vec![Hypothesis::start(model.bos())];
    let mut done = Vec::new();
    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        // (logprob, parent, token, p), ordered best first with deterministic ties.
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let dist = model.next_distribution(&hyp.ids)?;
            check_dist(model, &dist)?;
            cands.extend(
                dist.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(w, &p)| (hyp.logprob + p.ln(), parent, w, p)),
            );
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam);
        let mut next = Vec::with_capacity(cands.len());
        for (_, parent, w, p) in cands {
            let h = live[parent].extend(w as TokenId, p, model.eos());
            if h.finished {
                done.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    done.extend(live);
    done.sort_by(|a, b| {
        b.score(cfg.length_normalize)
            .partial_cmp(&a.score(cfg.length_normalize))
            .unwrap_or(Ordering::Equal)
    });
    Ok(done)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NucleusConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for NucleusConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            temperature: 0.1,
            seed: 0,
            max_len: 50,
        }
    }
}

/// Tempered distribution restricted to its smallest top-probability set with
/// mass at least `top_p`, renormalized. Entries are `(token, probability)` in
/// descending probability order, ties by token id.
pub fn nucleus_filter(dist: &[f64], top_p: f64, temperature: f64) -> Vec<(TokenId, f64)> {
    let max_ln = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut tempered: Vec<(TokenId, f64)> = dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i as TokenId, ((p.ln() - max_ln) / temperature).exp()))
        .collect();
    let total: f64 = tempered.iter().map(|x| x.1).sum();
    tempered.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for (id, w) in tempered {
        let p = w / total;
        kept.push((id, p));
        mass += p;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    for k in &mut kept {
        k.1 /= mass;
    }
    kept
}

/// Draws from a normalized `(token, probability)` list.
pub fn sample(choices: &[(TokenId, f64)], rng: &mut impl Rng) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in choices {
        acc += p;
        if u < acc {
            return id;
        }
    }
    choices.last().expect("non-empty choices").0
}

pub fn nucleus_sample(model: &dyn StepModel, cfg: NucleusConfig) -> Result<Hypothesis, DecodeError> {
    if !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
        return Err(DecodeError::InvalidArgument(format!("top_p {} outside (0, 1]", cfg.top_p)));
    }
    if !(cfg.temperature > 0.0) {
        return Err(DecodeError::InvalidArgument(format!("temperature {} must be positive", cfg.temperature)));
    }
    if cfg.temperature <= ARGMAX_TEMPERATURE {
        return greedy(model, cfg.max_len);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hyp = Hypothesis::start(model.bos());
    while !hyp.finished && hyp.generated() < cfg.max_len {
        let dist = model.next_distribution(&hyp.ids)?;
        check_dist(model, &dist)?;
        let w = sample(&nucleus_filter(&dist, cfg.top_p, cfg.temperature), &mut rng);
        hyp = hyp.extend(w, dist[w as usize], model.eos());
    }
    Ok(hyp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    /// Next-token distributions drawn from a seeded hash of the prefix.
    struct RandomModel {
        vocab: usize,
        seed: u64,
        eos: Option<TokenId>,
    }

    impl StepModel for RandomModel {
        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
            let mut h = self.seed;
            for &t in prefix {
                h = h.wrapping_mul(0x100000001b3).wrapping_add(t as u64 + 1);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            let w: Vec<f64> = (0..self.vocab).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
            let s: f64 = w.iter().sum();
            Ok(w.into_iter().map(|x| x / s).collect())
        }

        fn bos(&self) -> TokenId {
            0
        }

        fn eos(&self) -> Option<TokenId> {
            self.eos
        }
    }

    fn recomputed(model: &dyn StepModel, h: &Hypothesis) -> f64 {
        (1..h.ids.len())
            .map(|t| model.next_distribution(&h.ids[..t]).unwrap()[h.ids[t] as usize].ln())
            .sum()
    }

    #[test]
    fn max_len_zero_gives_bos_only() {
        let m = RandomModel { vocab: 5, seed: 1, eos: Some(3) };
        let out = beam_search(&m, BeamConfig { beam: 3, max_len: 0, length_normalize: true }).unwrap();
        assert_eq!(out, vec![Hypothesis { ids: vec![0], logprob: 0.0, finished: false }]);
    }

    #[test]
    fn exhaustive_oracle_on_three_tokens() {
        for seed in 0..20 {
            let m = RandomModel { vocab: 3, seed, eos: None };
            let mut best = (f64::NEG_INFINITY, vec![]);
            for a in 0..3 {
                for b in 0..3 {
                    let seq = vec![0, a, b];
                    let lp = recomputed(&m, &Hypothesis { ids: seq.clone(), logprob: 0.0, finished: false });
                    if lp > best.0 {
                        best = (lp, seq);
                    }
                }
            }
            let out = beam_search(&m, BeamConfig { beam: 9, max_len: 2, length_normalize: true }).unwrap();
            assert_eq!(out.len(), 9);
            assert_eq!(out[0].ids, best.1);
        }
    }

    #[test]
    fn greedy_stops_at_eos() {
        struct EosNow;
        impl StepModel for EosNow {
            fn vocab_size(&self) -> usize {
                5
            }
            fn next_distribution(&self, _: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
                Ok(vec![0.1, 0.1, 0.1, 0.6, 0.1])
            }
        }
        let h = greedy(&EosNow, 10).unwrap();
        assert_eq!(h.ids, vec![BOS, EOS]);
        assert!(h.finished && h.tokens().is_empty());
    }

    #[test]
    fn nucleus_small_top_p_is_deterministic() {
        let m = RandomModel { vocab: 6, seed: 4, eos: Some(5) };
        let g = greedy(&m, 8).unwrap();
        for seed in 0..5 {
            let cfg = NucleusConfig { top_p: 1e-9, temperature: 1.0, seed, max_len: 8 };
            assert_eq!(nucleus_sample(&m, cfg).unwrap(), g);
        }
        let cold = NucleusConfig { temperature: 1e-7, ..NucleusConfig::default() };
        assert_eq!(nucleus_sample(&m, NucleusConfig { max_len: 8, ..cold }).unwrap(), g);
    }

    #[test]
    fn nucleus_filter_keeps_smallest_prefix() {
        let kept = nucleus_filter(&[0.1, 0.5, 0.3, 0.1], 0.8, 1.0);
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!((kept[0].1 - 0.625).abs() < 1e-12);
        let all = nucleus_filter(&[0.25, 0.75], 1.0, 1.0);
        assert!((all[0].1 - 0.75).abs() < 1e-12 && (all[1].1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_arguments() {
        let m = RandomModel { vocab: 4, seed: 0, eos: None };
        assert!(beam_search(&m, BeamConfig { beam: 0, ..BeamConfig::default() }).is_err());
        assert!(nucleus_sample(&m, NucleusConfig { top_p: 0.0, ..NucleusConfig::default() }).is_err());
        assert!(nucleus_sample(&m, NucleusConfig { temperature: 0.0, ..NucleusConfig::default() }).is_err());
    }

    proptest! {
        #[test]
        fn beam_one_is_greedy(seed in any::<u64>(), vocab in 2usize..7, max_len in 0usize..7) {
            let m = RandomModel { vocab, seed, eos: Some(1) };
            let b = beam_search(&m, BeamConfig { beam: 1, max_len, length_normalize: true }).unwrap();
            prop_assert_eq!(&b[0], &greedy(&m, max_len).unwrap());
        }

        #[test]
        fn beams_sorted_with_exact_logprobs(seed in any::<u64>(), beam in 1usize..5, norm in any::<bool>()) {
            let m = RandomModel { vocab: 5, seed, eos: Some(2) };
            let out = beam_search(&m, BeamConfig { beam, max_len: 5, length_normalize: norm }).unwrap();
            for w in out.windows(2) {
                prop_assert!(w[0].score(norm) >= w[1].score(norm));
            }
            for h in &out {
                prop_assert!((h.logprob - recomputed(&m, h)).abs() < 1e-9);
                prop_assert!(h.generated() <= 5);
            }
        }

        #[test]
        fn wider_beam_not_worse_for_two_steps(seed in any::<u64>(), beam in 1usize..6) {
            let m = RandomModel { vocab: 4, seed, eos: Some(3) };
            let best = |k| beam_search(&m, BeamConfig { beam: k, max_len: 2, length_normalize: false }).unwrap()[0].logprob;
            prop_assert!(best(beam + 1) >= best(beam) - 1e-12);
        }
    }
}
