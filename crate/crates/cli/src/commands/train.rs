use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sqgen_core::corpus::split_dataset;
use sqgen_core::training::{self, EpochRecord};
use sqgen_core::{BertPgn, DatasetSplit, ModelConfig, PreparedExample, TrainConfig};

use crate::error::{CliError, Context, Result};
use crate::io::{load_vocab, read_json, read_jsonl, write_csv, write_text, Run};

pub const BEST_DIR: &str = "best";
pub const BEST_MARKER: &str = "best_epoch.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Architecture flags shared by commands that build a model.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub max_context: Option<usize>,
    #[arg(long)]
    pub max_question: Option<usize>,
    /// Drop the copy distribution (vocabulary softmax only).
    #[arg(long)]
    pub no_pointer: bool,
    /// Drop the decoder-side language model stack.
    #[arg(long)]
    pub no_decoder_lm: bool,
    /// Drop answer type embeddings from the encoder input.
    #[arg(long)]
    pub no_type_ids: bool,
}

impl ModelFlags {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(n) = self.max_context {
            cfg.max_context = n;
        }
        if let Some(n) = self.max_question {
            cfg.max_question = n;
        }
        cfg.use_pointer &= !self.no_pointer;
        cfg.use_decoder_lm &= !self.no_decoder_lm;
        cfg.use_type_ids &= !self.no_type_ids;
    }
}

/// Contents of `--config`; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the toy architecture sized to the vocabulary and data.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    /// Train fraction when no dev file is given.
    pub train_ratio: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out set for perplexity; split from `--data` when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    train_loss: f64,
    dev_perplexity: f64,
}

fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch-{epoch}"))
}

fn default_model(vocab_size: usize, data: &[PreparedExample]) -> ModelConfig {
    let mut cfg = ModelConfig::toy(vocab_size);
    cfg.max_context = data.iter().map(|e| e.context_ids.len()).max().unwrap_or(0).max(cfg.max_context);
    cfg.max_question = data.iter().map(|e| e.question_ids.len()).max().unwrap_or(0).max(cfg.max_question);
    cfg
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut run = Run::start("train");
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            run.input(path);
            read_json(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if args.train_ratio.is_some() {
        cfg.train_ratio = args.train_ratio;
    }

    let vocab = load_vocab(&args.vocab)?;
    run.input(&args.vocab).input(&args.data);
    let data: Vec<PreparedExample> = read_jsonl(&args.data)?;
    let split = match &args.dev {
        Some(dev) => {
            run.input(dev);
            DatasetSplit {
                train: data,
                dev: read_jsonl(dev)?,
                seed: cfg.train.seed,
            }
        }
        None => split_dataset(data, cfg.train_ratio.unwrap_or(0.9), cfg.train.seed).context("cannot split data")?,
    };

    let mut model_cfg = match cfg.model.take() {
        Some(m) => m,
        None => default_model(vocab.len(), &[split.train.as_slice(), split.dev.as_slice()].concat()),
    };
    args.model.apply(&mut model_cfg);
    if model_cfg.vocab_size != vocab.len() {
        return Err(CliError::input(format!(
            "model vocab_size {} does not match vocabulary of {} tokens",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    cfg.model = Some(model_cfg.clone());
    run.config(&cfg).seed(cfg.train.seed);

    fs::create_dir_all(&args.out).context(format_args!("cannot create {}", args.out.display()))?;
    let model = BertPgn::new_random(model_cfg, cfg.train.seed)?;
    eprintln!(
        "{} parameters, {} train / {} dev examples",
        model.num_parameters(),
        split.train.len(),
        split.dev.len()
    );

    let mut save_error = None;
    let outcome = training::train(model, &split, &cfg.train, |rec: &EpochRecord, m: &BertPgn| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev ppl {:.4}  {:.1}s",
            rec.epoch, rec.train_loss, rec.dev_perplexity, rec.wall_seconds
        );
        if save_error.is_none() {
            save_error = m.save(&epoch_dir(&args.out, rec.epoch)).err();
        }
    })?;
    if let Some(e) = save_error {
        return Err(CliError::input(format!("cannot write checkpoint: {e}")));
    }

    let best_epoch = outcome.best_epoch.unwrap_or(0);
    if outcome.best_epoch.is_none() {
        outcome.best.save(&epoch_dir(&args.out, 0))?;
    }
    outcome.best.save(&args.out.join(BEST_DIR))?;
    write_text(&args.out.join(BEST_MARKER), &format!("epoch-{best_epoch}\n"))?;
    write_csv(
        &args.out.join(LOG_FILE),
        outcome.log.iter().map(|r| LogRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            dev_perplexity: r.dev_perplexity,
        }),
    )?;
    eprintln!("best epoch {best_epoch}");
    run.output(&args.out);
    run.finish(&args.out.join(RUN_MANIFEST))
}
