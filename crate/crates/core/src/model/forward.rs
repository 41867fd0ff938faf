//! Graph construction for the encoder and the pointer-generator decoder.

use crate::numerics::layers::{
    feed_forward, layer_norm, linear, mean_of, multi_head_attention, AttentionMask,
};
use crate::numerics::{Graph, NumericsError, Var};
use crate::textproc::TokenId;

use super::layout::{BlockIds, CrossBlockIds, DecoderIds, EncoderIds};
use super::ModelConfig;

fn as_indices(ids: &[TokenId]) -> Vec<usize> {
    ids.iter().map(|&i| i as usize).collect()
}

/// `X + P + T` for a token sequence; `types` is ignored when the encoder has no
/// type embeddings.
pub(crate) fn embed(g: &mut Graph<'_>, enc: &EncoderIds, ids: &[TokenId], types: &[u8]) -> Var {
    let word = g.param(enc.word);
    let x = g.gather_rows(word, &as_indices(ids));
    let pos_table = g.param(enc.position);
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = g.gather_rows(pos_table, &positions);
    let mut out = g.add(x, p);
    if let Some(type_table) = enc.token_type {
        let table = g.param(type_table);
        let t_ids: Vec<usize> = types.iter().map(|&t| t as usize).collect();
        let t = g.gather_rows(table, &t_ids);
        out = g.add(out, t);
    }
    out
}

/// Post-norm block: `LN(x + MHA(x)) -> LN(h + FFN(h))`.
pub(crate) fn block(
    g: &mut Graph<'_>,
    ids: &BlockIds,
    x: Var,
    heads: usize,
    mask: &AttentionMask,
) -> Result<Var, NumericsError> {
    let att = multi_head_attention(g, &ids.attention, x, x, x, heads, mask)?;
    let h = g.add(att.output, x);
    let h = layer_norm(g, h, &ids.attention_norm);
    let f = feed_forward(g, h, &ids.ffn);
    let o = g.add(f, h);
    Ok(layer_norm(g, o, &ids.ffn_norm))
}

pub(crate) fn encoder_stack(
    g: &mut Graph<'_>,
    enc: &EncoderIds,
    embedded: Var,
    heads: usize,
) -> Result<Var, NumericsError> {
    let mut h = embedded;
    for b in &enc.blocks {
        h = block(g, b, h, heads, &AttentionMask::Full)?;
    }
    Ok(h)
}

/// Every intermediate of a decoder pass over a whole prefix; rows are steps.
pub(crate) struct DecoderVars {
    /// Output of the LM stack (the gate's `Y`).
    pub lm_out: Var,
    pub a_s: Var,
    pub a_c: Var,
    pub o: Var,
    /// Head-averaged self-attention weights of the final cross block.
    pub self_attn: Var,
    /// Head-averaged cross-attention weights of the final cross block.
    pub copy_attn: Var,
    pub vocab_dist: Var,
    pub p_gen: Option<Var>,
    pub final_dist: Var,
}

struct CrossOut {
    a_s: Var,
    a_c: Var,
    o: Var,
    self_attn: Var,
    copy_attn: Var,
}

fn cross_block(
    g: &mut Graph<'_>,
    ids: &CrossBlockIds,
    y: Var,
    h: Var,
    heads: usize,
) -> Result<CrossOut, NumericsError> {
    let sa = multi_head_attention(g, &ids.self_attention, y, y, y, heads, &AttentionMask::Causal)?;
    let a_s = g.add(sa.output, y);
    let a_s = layer_norm(g, a_s, &ids.self_norm);
    let ca = multi_head_attention(g, &ids.cross_attention, a_s, h, h, heads, &AttentionMask::Full)?;
    let a_c = g.add(ca.output, a_s);
    let a_c = layer_norm(g, a_c, &ids.cross_norm);
    let f = feed_forward(g, a_c, &ids.ffn);
    let o = g.add(f, a_c);
    let o = layer_norm(g, o, &ids.ffn_norm);
    Ok(CrossOut {
        a_s,
        a_c,
        o,
        self_attn: mean_of(g, &sa.head_weights),
        copy_attn: mean_of(g, &ca.head_weights),
    })
}

pub(crate) fn decoder(
    g: &mut Graph<'_>,
    dec: &DecoderIds,
    cfg: &ModelConfig,
    h: Var,
    context_ids: &[TokenId],
    prefix: &[TokenId],
) -> Result<DecoderVars, NumericsError> {
    let word = g.param(dec.word);
    let y = g.gather_rows(word, &as_indices(prefix));
    let pos_table = g.param(dec.position);
    let positions: Vec<usize> = (0..prefix.len()).collect();
    let p = g.gather_rows(pos_table, &positions);
    let mut y = g.add(y, p);
    for b in &dec.lm_blocks {
        y = block(g, b, y, cfg.n_heads, &AttentionMask::Causal)?;
    }
    let lm_out = y;

    let mut last = None;
    for b in &dec.cross_blocks {
        let out = cross_block(g, b, y, h, cfg.n_heads)?;
        y = out.o;
        last = Some(out);
    }
    let last = last.ok_or_else(|| NumericsError::Config("decoder needs at least one cross layer".into()))?;

    let logits = linear(g, last.o, &dec.output);
    let vocab_dist = g.softmax(logits);

    let (p_gen, final_dist) = match &dec.gate {
        Some(gate) => {
            let joined = g.concat_cols(&[lm_out, last.a_c]);
            let z = linear(g, joined, gate);
            let p_gen = g.sigmoid(z);
            let gen = g.mul_col(vocab_dist, p_gen);
            let copy = g.scatter_cols(last.copy_attn, &as_indices(context_ids), cfg.vocab_size);
            let p_copy = g.affine(p_gen, -1.0, 1.0);
            let copy = g.mul_col(copy, p_copy);
            (Some(p_gen), g.add(gen, copy))
        }
        None => (None, vocab_dist),
    };

    Ok(DecoderVars {
        lm_out,
        a_s: last.a_s,
        a_c: last.a_c,
        o: last.o,
        self_attn: last.self_attn,
        copy_attn: last.copy_attn,
        vocab_dist,
        p_gen,
        final_dist,
    })
}

/// Sum over steps of `-ln final_dist(target)`.
pub(crate) fn target_nll(g: &mut Graph<'_>, final_dist: Var, targets: &[TokenId]) -> Var {
    let picked = g.pick_per_row(final_dist, &as_indices(targets));
    let logs = g.ln(picked);
    let total = g.sum(logs);
    g.scale(total, -1.0)
}
