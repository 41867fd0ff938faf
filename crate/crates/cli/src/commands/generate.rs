use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sqgen_core::decoding::{beam_search, greedy, nucleus_sample, ContextDecoder};
use sqgen_core::{BeamConfig, BertPgn, Hypothesis, NucleusConfig, PreparedExample, TokenId};

use crate::error::{CliError, Context, Result};
use crate::io::{load_vocab, manifest_path_for, read_jsonl, write_jsonl, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Beam,
    Greedy,
    Nucleus,
}

/// Which text of a prepared example serves as the model context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextSource {
    #[default]
    Article,
    Highlights,
}

impl ContextSource {
    pub fn select(self, ex: &PreparedExample) -> Result<(Vec<TokenId>, Vec<u8>)> {
        match self {
            Self::Article => Ok((ex.context_ids.clone(), ex.type_ids.clone())),
            Self::Highlights => {
                let ids = ex
                    .highlight_ids
                    .clone()
                    .ok_or_else(|| CliError::input(format!("example {} has no highlights", ex.id)))?;
                let types = vec![1; ids.len()];
                Ok((ids, types))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub question_text: String,
    pub logprob: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Beam)]
    pub mode: Mode,
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
    /// Rank beams by total rather than per-token log probability.
    #[arg(long)]
    pub no_length_norm: bool,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on generated tokens (the checkpoint's limit when absent).
    #[arg(long)]
    pub max_question: Option<usize>,
    #[arg(long, value_enum, default_value_t = ContextSource::Article)]
    pub context_source: ContextSource,
}

fn decode_one(model: &BertPgn, args: &GenerateArgs, ex: &PreparedExample, index: usize) -> Result<Hypothesis> {
    let (ids, types) = args.context_source.select(ex)?;
    let decoder = ContextDecoder::new(model, &ids, &types).map_err(|e| CliError::input(format!("example {}: {e}", ex.id)))?;
    let max_len = args.max_question.map_or(decoder.max_len(), |q| (q + 1).min(decoder.max_len()));
    let hyp = match args.mode {
        Mode::Greedy => greedy(&decoder, max_len)?,
        Mode::Beam => beam_search(
            &decoder,
            BeamConfig {
                beam: args.beam,
                max_len,
                length_normalize: !args.no_length_norm,
            },
        )?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::input("beam search returned no hypothesis"))?,
        Mode::Nucleus => nucleus_sample(
            &decoder,
            NucleusConfig {
                top_p: args.top_p,
                temperature: args.temperature,
                seed: args.seed.wrapping_add(index as u64),
                max_len,
            },
        )?,
    };
    Ok(hyp)
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let mut run = Run::start("generate");
    run.config(args).seed(args.seed).input(&args.checkpoint).input(&args.vocab).input(&args.data);
    let model = BertPgn::load(&args.checkpoint)?;
    let vocab = load_vocab(&args.vocab)?;
    if vocab.len() != model.config().vocab_size {
        return Err(CliError::input(format!(
            "vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let data: Vec<PreparedExample> = read_jsonl(&args.data)?;
    let hyps: Vec<Hypothesis> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| decode_one(&model, args, ex, i))
        .collect::<Result<_>>()?;
    let rows = data
        .iter()
        .zip(&hyps)
        .map(|(ex, h)| {
            Ok(Generation {
                id: ex.id.clone(),
                question_text: vocab.decode(h.tokens()).context("cannot detokenize")?,
                logprob: h.logprob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &rows)?;
    eprintln!("{} questions written to {}", rows.len(), args.out.display());
    run.output(&args.out);
    run.finish(&manifest_path_for(&args.out))
}
