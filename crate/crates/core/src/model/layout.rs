//! Parameter layout of the encoder, decoder LM stack, and cross blocks.

use crate::numerics::layers::{AttentionIds, FeedForwardIds, LayerNormIds, LinearIds, ParamSink};
use crate::numerics::{Init, Initializer, NumericsError, ParamId, ParamStore, WEIGHT_INIT_STD};

use super::ModelConfig;

/// Post-norm transformer block: attention, add & norm, feed-forward, add & norm.
#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub attention: AttentionIds,
    pub attention_norm: LayerNormIds,
    pub ffn: FeedForwardIds,
    pub ffn_norm: LayerNormIds,
}

impl BlockIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, dim: usize, hidden: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            attention: AttentionIds::declare(sink, &format!("{prefix}.attention"), dim)?,
            attention_norm: LayerNormIds::declare(sink, &format!("{prefix}.attention_norm"), dim)?,
            ffn: FeedForwardIds::declare(sink, &format!("{prefix}.ffn"), dim, hidden)?,
            ffn_norm: LayerNormIds::declare(sink, &format!("{prefix}.ffn_norm"), dim)?,
        })
    }
}

/// Decoder self-attention, cross-attention over the encoding, and feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct CrossBlockIds {
    pub self_attention: AttentionIds,
    pub self_norm: LayerNormIds,
    pub cross_attention: AttentionIds,
    pub cross_norm: LayerNormIds,
    pub ffn: FeedForwardIds,
    pub ffn_norm: LayerNormIds,
}

impl CrossBlockIds {
    fn declare(sink: &mut dyn ParamSink, prefix: &str, dim: usize, hidden: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            self_attention: AttentionIds::declare(sink, &format!("{prefix}.self_attention"), dim)?,
            self_norm: LayerNormIds::declare(sink, &format!("{prefix}.self_norm"), dim)?,
            cross_attention: AttentionIds::declare(sink, &format!("{prefix}.cross_attention"), dim)?,
            cross_norm: LayerNormIds::declare(sink, &format!("{prefix}.cross_norm"), dim)?,
            ffn: FeedForwardIds::declare(sink, &format!("{prefix}.ffn"), dim, hidden)?,
            ffn_norm: LayerNormIds::declare(sink, &format!("{prefix}.ffn_norm"), dim)?,
        })
    }
}

/// Word, position and (optional) type embeddings plus a bidirectional stack.
#[derive(Debug, Clone)]
pub(crate) struct EncoderIds {
    pub word: ParamId,
    pub position: ParamId,
    pub token_type: Option<ParamId>,
    pub blocks: Vec<BlockIds>,
}

/// Shape parameters of an encoder stack.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderShape {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub max_positions: usize,
    pub with_types: bool,
}

impl EncoderIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, shape: EncoderShape) -> Result<Self, NumericsError> {
        let emb = Init::Normal { std: WEIGHT_INIT_STD };
        Ok(Self {
            word: sink.declare(&format!("{prefix}.word_embeddings"), &[shape.vocab_size, shape.dim], emb)?,
            position: sink.declare(&format!("{prefix}.position_embeddings"), &[shape.max_positions, shape.dim], emb)?,
            token_type: if shape.with_types {
                Some(sink.declare(&format!("{prefix}.type_embeddings"), &[2, shape.dim], emb)?)
            } else {
                None
            },
            blocks: (0..shape.layers)
                .map(|i| BlockIds::declare(sink, &format!("{prefix}.layer.{i}"), shape.dim, shape.hidden))
                .collect::<Result<_, _>>()?,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderIds {
    pub word: ParamId,
    pub position: ParamId,
    pub lm_blocks: Vec<BlockIds>,
    pub cross_blocks: Vec<CrossBlockIds>,
    pub gate: Option<LinearIds>,
    pub output: LinearIds,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub encoder: EncoderIds,
    pub decoder: DecoderIds,
}

impl Layout {
    pub fn declare(sink: &mut dyn ParamSink, cfg: &ModelConfig) -> Result<Self, NumericsError> {
        let d = cfg.d_model;
        let emb = Init::Normal { std: WEIGHT_INIT_STD };
        let encoder = EncoderIds::declare(
            sink,
            "encoder",
            EncoderShape {
                vocab_size: cfg.vocab_size,
                dim: d,
                hidden: cfg.ffn_dim,
                layers: cfg.encoder_layers,
                max_positions: cfg.max_context,
                with_types: cfg.use_type_ids,
            },
        )?;
        let lm_layers = if cfg.use_decoder_lm { cfg.decoder_lm_layers } else { 0 };
        let decoder = DecoderIds {
            word: sink.declare("decoder.word_embeddings", &[cfg.vocab_size, d], emb)?,
            position: sink.declare("decoder.position_embeddings", &[cfg.max_question + 1, d], emb)?,
            lm_blocks: (0..lm_layers)
                .map(|i| BlockIds::declare(sink, &format!("decoder.lm.layer.{i}"), d, cfg.ffn_dim))
                .collect::<Result<_, _>>()?,
            cross_blocks: (0..cfg.cross_layers)
                .map(|i| CrossBlockIds::declare(sink, &format!("decoder.cross.layer.{i}"), d, cfg.ffn_dim))
                .collect::<Result<_, _>>()?,
            gate: if cfg.use_pointer {
                Some(LinearIds::declare(sink, "decoder.gate", 2 * d, 1)?)
            } else {
                None
            },
            output: LinearIds::declare(sink, "decoder.output", d, cfg.vocab_size)?,
        };
        Ok(Self { encoder, decoder })
    }
}

/// Declares parameters into a store, drawing initial values from a seeded RNG.
pub(crate) struct FreshParams<'a> {
    pub store: &'a mut ParamStore,
    pub init: Initializer,
}

impl ParamSink for FreshParams<'_> {
    fn declare(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NumericsError> {
        let tensor = self.init.tensor(shape, init);
        self.store.insert(name, tensor)
    }
}

/// Resolves declarations against an already populated store, checking shapes.
pub(crate) struct ExistingParams<'a> {
    pub store: &'a ParamStore,
    pub seen: usize,
}

impl ParamSink for ExistingParams<'_> {
    fn declare(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId, NumericsError> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| NumericsError::Shape(format!("missing parameter {name}")))?;
        let found = self.store.get(id).shape();
        if found != shape {
            return Err(NumericsError::Shape(format!(
                "parameter {name} has shape {found:?}, expected {shape:?}"
            )));
        }
        self.seen += 1;
        Ok(id)
    }
}
