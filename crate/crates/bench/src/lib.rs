//! Shared inputs for the criterion benchmarks.

use sqgen_core::textproc::NUM_SPECIALS;
use sqgen_core::{BertPgn, ModelConfig, Tensor, TokenId};

/// Deterministic pseudo-random matrix with entries in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

/// Toy model with a context of `len` tokens, the first quarter answer-tagged.
pub fn toy_model(vocab: usize, len: usize) -> (BertPgn, Vec<TokenId>, Vec<u8>) {
    let mut cfg = ModelConfig::toy(vocab);
    cfg.max_context = cfg.max_context.max(len);
    let model = BertPgn::new_random(cfg, 7).expect("valid toy config");
    let ids = (0..len).map(|i| (NUM_SPECIALS + i % (vocab - NUM_SPECIALS)) as TokenId).collect();
    let types = (0..len).map(|i| u8::from(i < len / 4)).collect();
    (model, ids, types)
}

/// Pairs of word sequences with partial overlap.
pub fn sentence_pairs(n: usize, len: usize) -> (Vec<Vec<u32>>, Vec<Vec<Vec<u32>>>) {
    let cands = (0..n).map(|i| (0..len).map(|k| ((i * 7 + k * 3) % 50) as u32).collect()).collect();
    let refs = (0..n)
        .map(|i| vec![(0..len).map(|k| ((i * 7 + k * 3 + k / 4) % 50) as u32).collect()])
        .collect();
    (cands, refs)
}
