//! Transformer building blocks expressed as graph operations.

use super::graph::{Graph, Var};
use super::{Init, NumericsError, ParamId, WEIGHT_INIT_STD};

/// Layer-norm epsilon used by every block.
pub const LN_EPS: f64 = 1e-12;

/// Additive value for masked attention scores.
pub const MASK_VALUE: f64 = -1e9;

/// Receives parameter declarations. Implementations either create fresh
/// tensors or resolve existing ones by name.
pub trait ParamSink {
    fn declare(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NumericsError>;
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, inputs: usize, outputs: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            weight: sink.declare(
                &format!("{prefix}.weight"),
                &[inputs, outputs],
                Init::Normal { std: WEIGHT_INIT_STD },
            )?,
            bias: sink.declare(&format!("{prefix}.bias"), &[1, outputs], Init::Zeros)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, dim: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            gain: sink.declare(&format!("{prefix}.gain"), &[1, dim], Init::Ones)?,
            bias: sink.declare(&format!("{prefix}.bias"), &[1, dim], Init::Zeros)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForwardIds {
    pub inner: LinearIds,
    pub outer: LinearIds,
}

impl FeedForwardIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, dim: usize, hidden: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            inner: LinearIds::declare(sink, &format!("{prefix}.inner"), dim, hidden)?,
            outer: LinearIds::declare(sink, &format!("{prefix}.outer"), hidden, dim)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub query: LinearIds,
    pub key: LinearIds,
    pub value: LinearIds,
    pub output: LinearIds,
}

impl AttentionIds {
    pub fn declare(sink: &mut dyn ParamSink, prefix: &str, dim: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            query: LinearIds::declare(sink, &format!("{prefix}.query"), dim, dim)?,
            key: LinearIds::declare(sink, &format!("{prefix}.key"), dim, dim)?,
            value: LinearIds::declare(sink, &format!("{prefix}.value"), dim, dim)?,
            output: LinearIds::declare(sink, &format!("{prefix}.output"), dim, dim)?,
        })
    }
}

pub fn linear(g: &mut Graph<'_>, x: Var, ids: &LinearIds) -> Var {
    let w = g.param(ids.weight);
    let b = g.param(ids.bias);
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

pub fn layer_norm(g: &mut Graph<'_>, x: Var, ids: &LayerNormIds) -> Var {
    let gain = g.param(ids.gain);
    let bias = g.param(ids.bias);
    g.layer_norm(x, gain, bias, LN_EPS)
}

/// Position-wise `W2 gelu(W1 x + b1) + b2`.
pub fn feed_forward(g: &mut Graph<'_>, x: Var, ids: &FeedForwardIds) -> Var {
    let h = linear(g, x, &ids.inner);
    let h = g.gelu(h);
    linear(g, h, &ids.outer)
}

/// Which keys each query may attend to.
#[derive(Debug, Clone)]
pub enum AttentionMask {
    /// Every query sees every key.
    Full,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Explicit `queries x keys` visibility; a single row broadcasts over queries.
    Allowed { rows: usize, cols: usize, allowed: Vec<bool> },
}

impl AttentionMask {
    fn additive(&self, queries: usize, keys: usize) -> Result<Option<Vec<f64>>, NumericsError> {
        let mask = |vis: &dyn Fn(usize, usize) -> bool| {
            let mut m = vec![0.0; queries * keys];
            for i in 0..queries {
                for j in 0..keys {
                    if !vis(i, j) {
                        m[i * keys + j] = MASK_VALUE;
                    }
                }
            }
            m
        };
        match self {
            Self::Full => Ok(None),
            Self::Causal => Ok(Some(mask(&|i, j| j <= i))),
            Self::Allowed { rows, cols, allowed } => {
                if *cols != keys || (*rows != queries && *rows != 1) || allowed.len() != rows * cols {
                    return Err(NumericsError::Shape(format!(
                        "mask {rows}x{cols} does not broadcast to {queries}x{keys}"
                    )));
                }
                let r = *rows;
                Ok(Some(mask(&|i, j| allowed[if r == 1 { j } else { i * keys + j }])))
            }
        }
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// Attention weights per head, each `queries x keys`.
    pub head_weights: Vec<Var>,
}

/// Scaled dot-product attention split over `n_heads`, with input projections
/// for query/key/value and an output projection.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    ids: &AttentionIds,
    query: Var,
    key: Var,
    value: Var,
    n_heads: usize,
    mask: &AttentionMask,
) -> Result<AttentionOutput, NumericsError> {
    let (queries, dim) = g.dims(query);
    let keys = g.dims(key).0;
    if n_heads == 0 || dim % n_heads != 0 {
        return Err(NumericsError::Config(format!(
            "model dim {dim} not divisible by {n_heads} heads"
        )));
    }
    let additive = mask.additive(queries, keys)?;
    let head_dim = dim / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q = linear(g, query, &ids.query);
    let k = linear(g, key, &ids.key);
    let v = linear(g, value, &ids.value);

    let mut contexts = Vec::with_capacity(n_heads);
    let mut head_weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim);
        let kh = g.slice_cols(k, h * head_dim, head_dim);
        let vh = g.slice_cols(v, h * head_dim, head_dim);
        let scores = g.matmul_bt(qh, kh);
        let mut scores = g.scale(scores, scale);
        if let Some(m) = &additive {
            scores = g.add_const(scores, m);
        }
        let weights = g.softmax(scores);
        contexts.push(g.matmul(weights, vh));
        head_weights.push(weights);
    }
    let joined = if n_heads == 1 {
        contexts[0]
    } else {
        g.concat_cols(&contexts)
    };
    let output = linear(g, joined, &ids.output);
    Ok(AttentionOutput { output, head_weights })
}

/// Elementwise mean of equally shaped values.
pub fn mean_of(g: &mut Graph<'_>, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v);
    }
    g.scale(acc, 1.0 / vars.len() as f64)
}
