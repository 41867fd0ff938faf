//! The answer-tagged pointer-generator transformer.
//!
//! The encoder reads `X + P + T` (word, position and answer-type embeddings)
//! through a bidirectional stack. The decoder runs a causal LM stack over the
//! BOS-prefixed question, then cross blocks that compute, per step,
//!
//! ```text
//! A_S = LN(MHA(Y, Y, Y) + Y)        (causal)
//! A_C = LN(MHA(A_S, H, H) + A_S)
//! O   = LN(FFN(A_C) + A_C)
//! ```
//!
//! The output mixes a vocabulary softmax over `O` with the head-averaged
//! final cross-attention scattered onto the context token ids, weighted by
//! `p_gen = sigmoid(W [Y; A_C] + b)`.

pub(crate) mod forward;
pub(crate) mod layout;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::numerics::{logistic, Graph, Initializer, NumericsError, ParamStore, Tensor};
use crate::textproc::{TokenId, BOS, EOS};

use layout::{ExistingParams, FreshParams, Layout};

pub const CHECKPOINT_KIND: &str = "bert_pgn";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("context has {len} tokens, limit is {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("decoder prefix has {len} tokens, limit is {max}")]
    QuestionTooLong { len: usize, max: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_lm_layers: usize,
    pub cross_layers: usize,
    pub ffn_dim: usize,
    pub max_context: usize,
    pub max_question: usize,
    pub use_pointer: bool,
    pub use_decoder_lm: bool,
    pub use_type_ids: bool,
}

impl ModelConfig {
    /// BERT-base sized encoder and LM stacks with a 2-layer cross transformer.
    pub fn base() -> Self {
        Self {
            vocab_size: 30522,
            d_model: 768,
            n_heads: 12,
            encoder_layers: 12,
            decoder_lm_layers: 12,
            cross_layers: 2,
            ffn_dim: 3072,
            max_context: 500,
            max_question: 50,
            use_pointer: true,
            use_decoder_lm: true,
            use_type_ids: true,
        }
    }

    /// 2-layer, 64-dim, 4-head configuration for tests and quick experiments.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            decoder_lm_layers: 2,
            cross_layers: 2,
            ffn_dim: 128,
            max_context: 64,
            max_question: 16,
            use_pointer: true,
            use_decoder_lm: true,
            use_type_ids: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.vocab_size <= EOS as usize {
            return fail(format!("vocab_size {} leaves no room for special tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.cross_layers == 0 {
            return fail("cross_layers must be at least 1".into());
        }
        if self.ffn_dim == 0 || self.max_context == 0 || self.max_question == 0 {
            return fail("ffn_dim, max_context and max_question must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `L x d_model` contextual encoding.
    pub h: Tensor,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }
}

/// Decoder state at the last position of a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput {
    /// Rows of `A_S`, `A_C` and `O` for every step up to and including the last.
    pub a_s: Tensor,
    pub a_c: Tensor,
    pub o: Tensor,
    pub p_gen: f64,
    pub vocab_dist: Vec<f64>,
    pub copy_attn: Vec<f64>,
    pub final_dist: Vec<f64>,
}

/// Decoder values for every step of a prefix; row `t` is step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTrace {
    pub lm_out: Tensor,
    pub a_s: Tensor,
    pub a_c: Tensor,
    pub o: Tensor,
    /// Head-averaged causal self-attention of the final cross block, `T x T`.
    pub self_attn: Tensor,
    pub copy_attn: Tensor,
    pub vocab_dist: Tensor,
    pub p_gen: Vec<f64>,
    pub final_dist: Tensor,
}

impl DecoderTrace {
    pub fn steps(&self) -> usize {
        self.o.rows()
    }

    pub fn step(&self, t: usize) -> DecoderStepOutput {
        let upto = |m: &Tensor| {
            let cols = m.cols();
            Tensor::new(vec![t + 1, cols], m.data()[..(t + 1) * cols].to_vec()).expect("prefix rows")
        };
        DecoderStepOutput {
            a_s: upto(&self.a_s),
            a_c: upto(&self.a_c),
            o: upto(&self.o),
            p_gen: self.p_gen[t],
            vocab_dist: self.vocab_dist.row(t).to_vec(),
            copy_attn: self.copy_attn.row(t).to_vec(),
            final_dist: self.final_dist.row(t).to_vec(),
        }
    }
}

/// `logistic(w . [y; a_c] + b)`.
pub fn generation_gate(y: &[f64], a_c: &[f64], weight: &[f64], bias: f64) -> f64 {
    assert_eq!(weight.len(), y.len() + a_c.len(), "gate weight length");
    let z: f64 = y.iter().chain(a_c).zip(weight).map(|(x, w)| x * w).sum::<f64>() + bias;
    logistic(z)
}

/// `p_gen * vocab_dist(w) + (1 - p_gen) * sum_{i: context[i] = w} copy_attn[i]`.
pub fn output_distribution(p_gen: f64, vocab_dist: &[f64], copy_attn: &[f64], context_ids: &[TokenId]) -> Vec<f64> {
    assert_eq!(copy_attn.len(), context_ids.len(), "copy attention length");
    let mut out: Vec<f64> = vocab_dist.iter().map(|p| p_gen * p).collect();
    for (&a, &id) in copy_attn.iter().zip(context_ids) {
        out[id as usize] += (1.0 - p_gen) * a;
    }
    out
}

#[derive(Debug, Clone)]
pub struct BertPgn {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl BertPgn {
    /// Random initialization: N(0, 0.02) weights, zero biases, unit norm gains.
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::declare(
            &mut FreshParams {
                store: &mut params,
                init: Initializer::new(seed),
            },
            &config,
        )?;
        Ok(Self { config, params, layout })
    }

    /// Wraps an existing parameter store, which must contain exactly the
    /// tensors the config calls for.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let mut sink = ExistingParams {
            store: &params,
            seen: 0,
        };
        let layout = Layout::declare(&mut sink, &config)?;
        if sink.seen != params.len() {
            return Err(ModelError::Config(format!(
                "store has {} tensors, config uses {}",
                params.len(),
                sink.seen
            )));
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Gate weight (length `2 d_model`) and bias, if the pointer is enabled.
    pub fn gate_params(&self) -> Option<(&[f64], f64)> {
        self.layout
            .decoder
            .gate
            .map(|g| (self.params.get(g.weight).data(), self.params.get(g.bias).data()[0]))
    }

    pub(crate) fn check_context(&self, context_ids: &[TokenId], type_ids: &[u8]) -> Result<(), ModelError> {
        if context_ids.len() != type_ids.len() {
            return Err(ModelError::InvalidInput(format!(
                "{} context ids but {} type ids",
                context_ids.len(),
                type_ids.len()
            )));
        }
        if context_ids.is_empty() {
            return Err(ModelError::InvalidInput("empty context".into()));
        }
        if context_ids.len() > self.config.max_context {
            return Err(ModelError::ContextTooLong {
                len: context_ids.len(),
                max: self.config.max_context,
            });
        }
        self.check_tokens(context_ids)?;
        if let Some(t) = type_ids.iter().find(|&&t| t > 1) {
            return Err(ModelError::InvalidInput(format!("type id {t} is not 0 or 1")));
        }
        Ok(())
    }

    pub(crate) fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ModelError> {
        if prefix.is_empty() {
            return Err(ModelError::InvalidInput("decoder prefix is empty".into()));
        }
        if prefix.len() > self.config.max_question + 1 {
            return Err(ModelError::QuestionTooLong {
                len: prefix.len(),
                max: self.config.max_question + 1,
            });
        }
        self.check_tokens(prefix)
    }

    fn check_tokens(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(id) => Err(ModelError::InvalidInput(format!(
                "token {id} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// `X + P + T` for a context, `L x d_model`.
    pub fn embed_inputs(&self, context_ids: &[TokenId], type_ids: &[u8]) -> Result<Tensor, ModelError> {
        self.check_context(context_ids, type_ids)?;
        let mut g = Graph::new(&self.params);
        let x = forward::embed(&mut g, &self.layout.encoder, context_ids, type_ids);
        Ok(g.tensor(x))
    }

    /// Runs the encoder stack over an embedded input.
    pub fn encode(&self, embedded: &Tensor) -> Result<EncoderOutput, ModelError> {
        let (rows, cols) = embedded.matrix_dims();
        if cols != self.config.d_model {
            return Err(ModelError::InvalidInput(format!(
                "embedding width {cols}, model width {}",
                self.config.d_model
            )));
        }
        if rows > self.config.max_context {
            return Err(ModelError::ContextTooLong {
                len: rows,
                max: self.config.max_context,
            });
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(embedded);
        let h = forward::encoder_stack(&mut g, &self.layout.encoder, x, self.config.n_heads)?;
        g.check_finite()?;
        Ok(EncoderOutput { h: g.tensor(h) })
    }

    /// Embeds and encodes a tagged context.
    pub fn encode_context(&self, context_ids: &[TokenId], type_ids: &[u8]) -> Result<EncoderOutput, ModelError> {
        self.check_context(context_ids, type_ids)?;
        let mut g = Graph::new(&self.params);
        let x = forward::embed(&mut g, &self.layout.encoder, context_ids, type_ids);
        let h = forward::encoder_stack(&mut g, &self.layout.encoder, x, self.config.n_heads)?;
        g.check_finite()?;
        Ok(EncoderOutput { h: g.tensor(h) })
    }

    /// Decoder values at every step of `prefix` (which starts with BOS).
    pub fn decode_trace(
        &self,
        prefix: &[TokenId],
        encoded: &EncoderOutput,
        context_ids: &[TokenId],
    ) -> Result<DecoderTrace, ModelError> {
        self.check_prefix(prefix)?;
        self.check_tokens(context_ids)?;
        if encoded.len() != context_ids.len() || encoded.h.cols() != self.config.d_model {
            return Err(ModelError::InvalidInput(format!(
                "encoding is {:?} for {} context tokens",
                encoded.h.shape(),
                context_ids.len()
            )));
        }
        let mut g = Graph::new(&self.params);
        let h = g.input(&encoded.h);
        let v = forward::decoder(&mut g, &self.layout.decoder, &self.config, h, context_ids, prefix)?;
        g.check_finite()?;
        Ok(DecoderTrace {
            lm_out: g.tensor(v.lm_out),
            a_s: g.tensor(v.a_s),
            a_c: g.tensor(v.a_c),
            o: g.tensor(v.o),
            self_attn: g.tensor(v.self_attn),
            copy_attn: g.tensor(v.copy_attn),
            vocab_dist: g.tensor(v.vocab_dist),
            p_gen: match v.p_gen {
                Some(p) => g.value(p).to_vec(),
                None => vec![1.0; prefix.len()],
            },
            final_dist: g.tensor(v.final_dist),
        })
    }

    /// Decoder state at the last position of `prefix`.
    pub fn decode_step(
        &self,
        prefix: &[TokenId],
        encoded: &EncoderOutput,
        context_ids: &[TokenId],
    ) -> Result<DecoderStepOutput, ModelError> {
        let trace = self.decode_trace(prefix, encoded, context_ids)?;
        Ok(trace.step(prefix.len() - 1))
    }

    /// Builds the teacher-forced loss graph for one example. Returns the summed
    /// negative log-likelihood and the number of predicted tokens
    /// (`|question| + 1`, for the closing EOS).
    pub(crate) fn nll_graph<'p>(
        &'p self,
        g: &mut Graph<'p>,
        context_ids: &[TokenId],
        type_ids: &[u8],
        question_ids: &[TokenId],
    ) -> Result<(crate::numerics::Var, usize), ModelError> {
        self.check_context(context_ids, type_ids)?;
        let mut prefix = Vec::with_capacity(question_ids.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(question_ids);
        self.check_prefix(&prefix)?;
        let mut targets = question_ids.to_vec();
        targets.push(EOS);

        let x = forward::embed(g, &self.layout.encoder, context_ids, type_ids);
        let h = forward::encoder_stack(g, &self.layout.encoder, x, self.config.n_heads)?;
        let v = forward::decoder(g, &self.layout.decoder, &self.config, h, context_ids, &prefix)?;
        Ok((forward::target_nll(g, v.final_dist, &targets), targets.len()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        checkpoint::save(dir, CHECKPOINT_KIND, &self.config, &self.params)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let (manifest, params) = checkpoint::load(dir, CHECKPOINT_KIND)?;
        let config: ModelConfig = serde_json::from_value(manifest.config).map_err(CheckpointError::from)?;
        Self::from_parts(config, params)
    }
}
