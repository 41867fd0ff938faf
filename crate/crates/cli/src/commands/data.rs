use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use sqgen_core::corpus::{
    self, dataset_stats, filter_overlapping_contexts, prepare_example, prepare_news, rejection_histogram, split_dataset,
    NewsRecord, Outcome, RawRecord, Rejection,
};
use sqgen_core::textproc::{train_vocab_with, VocabOptions};
use sqgen_core::PreparedExample;

use crate::error::{Context, Result};
use crate::io::{load_vocab, manifest_path_for, read_jsonl, write_jsonl, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Nq,
    News,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Nq,
    News,
    /// One training line per input line.
    Text,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildVocabArgs {
    #[arg(long, value_enum)]
    pub kind: TextKind,
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8000)]
    pub size: usize,
    /// Keep case instead of lowercasing.
    #[arg(long)]
    pub cased: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let mut run = Run::start("build-vocab");
    run.config(args);
    let mut lines = Vec::new();
    for path in &args.inputs {
        run.input(path);
        match args.kind {
            TextKind::Nq => {
                for r in read_jsonl::<RawRecord>(path)? {
                    lines.push(corpus::joined_source(&r.title, &r.context));
                    lines.push(r.question);
                }
            }
            TextKind::News => {
                for r in read_jsonl::<NewsRecord>(path)? {
                    lines.push(r.article);
                    lines.extend(r.highlights);
                }
            }
            TextKind::Text => {
                let text = std::fs::read_to_string(path).context(format_args!("cannot read {}", path.display()))?;
                lines.extend(text.lines().map(str::to_string));
            }
        }
    }
    lines.retain(|l| !l.trim().is_empty());
    let options = VocabOptions { lowercase: !args.cased };
    let vocab = train_vocab_with(&lines, args.size, options).context("cannot train vocabulary")?;
    vocab.save(&args.out).context(format_args!("cannot write {}", args.out.display()))?;
    eprintln!("vocabulary of {} tokens written to {}", vocab.len(), args.out.display());
    run.output(&args.out);
    run.finish(&manifest_path_for(&args.out))
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let mut run = Run::start("prepare");
    run.config(args).input(&args.input).input(&args.vocab);
    let vocab = load_vocab(&args.vocab)?;
    let mut accepted = Vec::new();
    let mut rejected: Vec<Rejection> = Vec::new();
    let mut keep = |outcome: Outcome| match outcome {
        Outcome::Accepted(ex) => accepted.push(ex),
        Outcome::Rejected(r) => rejected.push(r),
    };
    match args.kind {
        CorpusKind::Nq => {
            for r in read_jsonl::<RawRecord>(&args.input)? {
                keep(prepare_example(&r, &vocab).context(format_args!("record {}", r.id))?);
            }
        }
        CorpusKind::News => {
            for r in read_jsonl::<NewsRecord>(&args.input)? {
                keep(prepare_news(&r.id, &r.article, r.highlights.as_deref(), &vocab));
            }
        }
    }
    write_jsonl(&args.out, &accepted)?;
    let hist = rejection_histogram(&rejected);
    eprintln!("accepted {}, rejected {}", accepted.len(), rejected.len());
    eprintln!("{}", serde_json::to_string(&hist).unwrap_or_default());
    run.output(&args.out);
    run.finish(&manifest_path_for(&args.out))
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let examples: Vec<PreparedExample> = read_jsonl(&args.data)?;
    let stats = dataset_stats(&examples);
    println!("{}", serde_json::to_string_pretty(&stats).context("cannot serialize")?);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Drop examples whose context also appears in these files.
    #[arg(long = "exclude")]
    pub exclude: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub dev_out: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let mut run = Run::start("split");
    run.config(args).input(&args.data).seed(args.seed);
    let mut examples: Vec<PreparedExample> = read_jsonl(&args.data)?;
    for path in &args.exclude {
        run.input(path);
        let seen: Vec<PreparedExample> = read_jsonl(path)?;
        examples = filter_overlapping_contexts(examples, &seen);
    }
    let split = split_dataset(examples, args.ratio, args.seed).context("cannot split")?;
    write_jsonl(&args.train_out, &split.train)?;
    write_jsonl(&args.dev_out, &split.dev)?;
    let counts = serde_json::json!({ "train": split.train.len(), "dev": split.dev.len() });
    println!("{counts}");
    run.output(&args.train_out).output(&args.dev_out);
    run.finish(&manifest_path_for(&args.train_out))
}
