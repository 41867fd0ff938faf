//! A small joint QA model: a transformer encoder over `[BOS] question [EOS]
//! context` with start/end pointer heads and an answer-type head read from
//! the BOS position, which doubles as the no-answer sentinel.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError};
use crate::model::forward::{embed, encoder_stack};
use crate::model::layout::{EncoderIds, EncoderShape, ExistingParams, FreshParams};
use crate::model::ModelError;
use crate::numerics::layers::{linear, LinearIds, ParamSink};
use crate::numerics::{Graph, Init, Initializer, NumericsError, ParamId, ParamStore, Var, WEIGHT_INIT_STD};
use crate::textproc::{TokenId, BOS, EOS, NUM_SPECIALS};
use crate::training::{adam_step, AdamState, TrainConfig};

use super::{AnswerType, QaError, QaOutput, QaScorer};

pub const CHECKPOINT_KIND: &str = "joint_qa";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointQaConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    /// Longest `[BOS] question [EOS] context` sequence.
    pub max_len: usize,
}

impl JointQaConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            layers: 2,
            ffn_dim: 64,
            max_len: 64,
        }
    }

    fn validate(&self) -> Result<(), QaError> {
        if self.vocab_size <= NUM_SPECIALS || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) || self.max_len < 4 {
            return Err(QaError::InvalidInput(format!("invalid QA config {self:?}")));
        }
        Ok(())
    }
}

/// Training example; `start`/`end` index `0..=n` with 0 meaning no answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub question: Vec<TokenId>,
    pub context: Vec<TokenId>,
    pub start: usize,
    pub end: usize,
    pub answer_type: AnswerType,
}

/// Retained for configuration files; the joint model trains with [`TrainConfig`].
pub type QaTrainConfig = TrainConfig;

#[derive(Debug, Clone)]
struct Heads {
    encoder: EncoderIds,
    start: ParamId,
    end: ParamId,
    types: LinearIds,
}

impl Heads {
    fn declare(sink: &mut dyn ParamSink, cfg: &JointQaConfig) -> Result<Self, NumericsError> {
        let encoder = EncoderIds::declare(
            sink,
            "qa.encoder",
            EncoderShape {
                vocab_size: cfg.vocab_size,
                dim: cfg.d_model,
                hidden: cfg.ffn_dim,
                layers: cfg.layers,
                max_positions: cfg.max_len,
                with_types: true,
            },
        )?;
        let init = Init::Normal { std: WEIGHT_INIT_STD };
        Ok(Self {
            encoder,
            start: sink.declare("qa.start.weight", &[1, cfg.d_model], init)?,
            end: sink.declare("qa.end.weight", &[1, cfg.d_model], init)?,
            types: LinearIds::declare(sink, "qa.types", cfg.d_model, 4)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct JointQaModel {
    config: JointQaConfig,
    params: ParamStore,
    heads: Heads,
}

struct QaVars {
    start: Var,
    end: Var,
    types: Var,
}

impl JointQaModel {
    pub fn new_random(config: JointQaConfig, seed: u64) -> Result<Self, QaError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let heads = Heads::declare(
            &mut FreshParams {
                store: &mut params,
                init: Initializer::new(seed),
            },
            &config,
        )
        .map_err(ModelError::from)?;
        Ok(Self { config, params, heads })
    }

    pub fn config(&self) -> &JointQaConfig {
        &self.config
    }

    fn check(&self, question: &[TokenId], context: &[TokenId]) -> Result<(), QaError> {
        let len = question.len() + context.len() + 2;
        if len > self.config.max_len {
            return Err(QaError::InvalidInput(format!(
                "question and context need {len} positions, limit is {}",
                self.config.max_len
            )));
        }
        if context.len() < 2 {
            return Err(QaError::ContextTooShort(context.len()));
        }
        if let Some(t) = question.iter().chain(context).find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(QaError::InvalidInput(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn forward<'p>(&'p self, g: &mut Graph<'p>, question: &[TokenId], context: &[TokenId]) -> Result<QaVars, QaError> {
        self.check(question, context)?;
        let mut ids = Vec::with_capacity(question.len() + context.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(question);
        ids.push(EOS);
        let offset = ids.len();
        ids.extend_from_slice(context);
        let mut types = vec![0u8; offset];
        types.resize(ids.len(), 1);

        let x = embed(g, &self.heads.encoder, &ids, &types);
        let h = encoder_stack(g, &self.heads.encoder, x, self.config.n_heads).map_err(ModelError::from)?;
        let positions: Vec<usize> = std::iter::once(0).chain(offset..ids.len()).collect();
        let cand = g.gather_rows(h, &positions);
        let ws = g.param(self.heads.start);
        let we = g.param(self.heads.end);
        let s = g.matmul_bt(ws, cand);
        let e = g.matmul_bt(we, cand);
        let cls = g.gather_rows(h, &[0]);
        let t = linear(g, cls, &self.heads.types);
        Ok(QaVars {
            start: g.softmax(s),
            end: g.softmax(e),
            types: g.softmax(t),
        })
    }

    fn example_loss<'p>(&'p self, g: &mut Graph<'p>, ex: &QaExample) -> Result<Var, QaError> {
        let n = ex.context.len();
        if ex.start > n || ex.end > n {
            return Err(QaError::InvalidInput(format!("span ({}, {}) outside {n} positions", ex.start, ex.end)));
        }
        let v = self.forward(g, &ex.question, &ex.context)?;
        let ps = g.pick_per_row(v.start, &[ex.start]);
        let pe = g.pick_per_row(v.end, &[ex.end]);
        let pt = g.pick_per_row(v.types, &[ex.answer_type as usize]);
        let joined = g.concat_cols(&[ps, pe, pt]);
        let logs = g.ln(joined);
        let total = g.sum(logs);
        Ok(g.scale(total, -1.0))
    }

    /// Mean loss over `examples`.
    pub fn loss(&self, examples: &[QaExample]) -> Result<f64, QaError> {
        let mut sum = 0.0;
        for ex in examples {
            let mut g = Graph::new(&self.params);
            let l = self.example_loss(&mut g, ex)?;
            sum += g.scalar(l);
        }
        Ok(sum / examples.len().max(1) as f64)
    }

    /// Adam training on span, no-answer and type targets. Returns the mean
    /// training loss of each epoch.
    pub fn train(&mut self, examples: &[QaExample], cfg: &TrainConfig) -> Result<Vec<f64>, QaError> {
        cfg.validate().map_err(|e| QaError::InvalidInput(e.to_string()))?;
        if examples.is_empty() {
            return Err(QaError::InvalidInput("no training examples".into()));
        }
        let mut state = AdamState::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let mut acc: Option<Vec<Vec<f64>>> = None;
                for &i in chunk {
                    let mut g = Graph::new(&self.params);
                    let l = self.example_loss(&mut g, &examples[i])?;
                    epoch_loss += g.scalar(l);
                    let grads = g.backward(l).map_err(ModelError::from)?.into_param_grads();
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(a) => a.iter_mut().zip(grads).for_each(|(x, y)| {
                            x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
                        }),
                    }
                }
                let mut grads = acc.expect("non-empty chunk");
                let scale = 1.0 / chunk.len() as f64;
                grads.iter_mut().flatten().for_each(|x| *x *= scale);
                adam_step(&mut self.params, &grads, &mut state, cfg).map_err(ModelError::from)?;
            }
            let mean = epoch_loss / examples.len() as f64;
            if !mean.is_finite() {
                return Err(QaError::Model(ModelError::Numerics(NumericsError::Numerical(
                    "QA training loss is not finite".into(),
                ))));
            }
            history.push(mean);
        }
        Ok(history)
    }

    pub fn save(&self, dir: &Path) -> Result<(), QaError> {
        checkpoint::save(dir, CHECKPOINT_KIND, &self.config, &self.params).map_err(ModelError::from)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, QaError> {
        let (manifest, params) = checkpoint::load(dir, CHECKPOINT_KIND).map_err(ModelError::from)?;
        let config: JointQaConfig = serde_json::from_value(manifest.config)
            .map_err(|e| ModelError::from(CheckpointError::from(e)))?;
        config.validate()?;
        let mut sink = ExistingParams {
            store: &params,
            seen: 0,
        };
        let heads = Heads::declare(&mut sink, &config).map_err(ModelError::from)?;
        if sink.seen != params.len() {
            return Err(QaError::InvalidInput("QA checkpoint has unexpected tensors".into()));
        }
        Ok(Self { config, params, heads })
    }
}

impl QaScorer for JointQaModel {
    fn score(&self, question: &[TokenId], context: &[TokenId]) -> Result<QaOutput, QaError> {
        let mut g = Graph::new(&self.params);
        let v = self.forward(&mut g, question, context)?;
        g.check_finite().map_err(ModelError::from)?;
        let types = g.value(v.types);
        Ok(QaOutput {
            p_start: g.value(v.start).to_vec(),
            p_end: g.value(v.end).to_vec(),
            type_probs: [types[0], types[1], types[2], types[3]],
        })
    }
}

/// Random contexts with three kinds of questions: a copied 2-3 token span
/// (short answer), the context's opening tokens (long answer over the whole
/// context), and tokens absent from the context (no answer).
pub fn synthetic_qa_examples(vocab_size: usize, count: usize, context_len: usize, seed: u64) -> Vec<QaExample> {
    assert!(context_len >= 4, "contexts need at least 4 tokens");
    assert!(vocab_size > NUM_SPECIALS + 2 * context_len, "vocabulary too small for disjoint questions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<TokenId> = (NUM_SPECIALS as TokenId..vocab_size as TokenId).collect();
    (0..count)
        .map(|i| {
            let context: Vec<TokenId> = words.choose_multiple(&mut rng, context_len).copied().collect();
            let n = context.len();
            match i % 3 {
                0 => {
                    let len = rng.random_range(2..=3);
                    let s = rng.random_range(0..=n - len);
                    QaExample {
                        question: context[s..s + len].to_vec(),
                        context,
                        start: s + 1,
                        end: s + len,
                        answer_type: AnswerType::ShortAnswer,
                    }
                }
                1 => QaExample {
                    question: context[..2].to_vec(),
                    context,
                    start: 1,
                    end: n,
                    answer_type: AnswerType::LongAnswer,
                },
                _ => {
                    let absent: Vec<TokenId> = words.iter().copied().filter(|w| !context.contains(w)).collect();
                    QaExample {
                        question: absent.choose_multiple(&mut rng, 3).copied().collect(),
                        context,
                        start: 0,
                        end: 0,
                        answer_type: AnswerType::Undetermined,
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qaeval::qa_score;

    #[test]
    fn outputs_are_distributions() {
        let m = JointQaModel::new_random(JointQaConfig::toy(40), 1).unwrap();
        let out = m.score(&[5, 6], &[7, 8, 9, 10]).unwrap();
        out.validate().unwrap();
        assert_eq!(out.n(), 4);
        assert!(m.score(&[5; 40], &[7; 30]).is_err());
    }

    #[test]
    fn overfit_gives_positive_answerability() {
        let data = synthetic_qa_examples(40, 6, 8, 3);
        let mut m = JointQaModel::new_random(JointQaConfig::toy(40), 2).unwrap();
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 3,
            epochs: 60,
            seed: 1,
            ..TrainConfig::default()
        };
        let hist = m.train(&data, &cfg).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let ex = &data[0];
        let s = qa_score(&m, &ex.question, &ex.context).unwrap();
        assert!(s.s_ans > 0.0, "s_ans = {}", s.s_ans);
        let none = &data[2];
        assert!(qa_score(&m, &none.question, &none.context).unwrap().s_ans < 0.0);

        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = JointQaModel::load(dir.path()).unwrap();
        assert_eq!(back.score(&ex.question, &ex.context).unwrap(), m.score(&ex.question, &ex.context).unwrap());
    }

    #[test]
    fn synthetic_examples_are_consistent() {
        for ex in synthetic_qa_examples(50, 30, 10, 7) {
            match ex.answer_type {
                AnswerType::Undetermined => {
                    assert_eq!((ex.start, ex.end), (0, 0));
                    assert!(ex.question.iter().all(|q| !ex.context.contains(q)));
                }
                _ => {
                    assert!(1 <= ex.start && ex.start < ex.end && ex.end <= ex.context.len());
                }
            }
        }
    }
}
