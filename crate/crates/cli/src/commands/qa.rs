use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use sqgen_core::qaeval::{synthetic_qa_examples, AnswerType, JointQaConfig, JointQaModel, QaExample};
use sqgen_core::{AnswerKind, PreparedExample, TrainConfig};

use super::generate::ContextSource;
use crate::error::{CliError, Result};
use crate::io::{load_vocab, read_json, read_jsonl, write_csv, Run};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaRunConfig {
    /// Defaults to the toy size with `max_len` fitted to the data.
    pub model: Option<JointQaConfig>,
    pub train: TrainConfig,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainQaArgs {
    /// Prepared examples; answer spans come from their type ids.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub vocab: Option<PathBuf>,
    /// Train on this many generated examples instead of `--data`.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Vocabulary size for synthetic data.
    #[arg(long, default_value_t = 64)]
    pub synthetic_vocab: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
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
    #[arg(long, value_enum, default_value_t = ContextSource::Article)]
    pub context_source: ContextSource,
}

/// Answerable examples from gold spans plus one unanswerable pairing of each
/// question with the next example's (different) context.
fn examples_from_prepared(data: &[PreparedExample], source: ContextSource) -> Result<Vec<QaExample>> {
    let with_q: Vec<&PreparedExample> = data.iter().filter(|e| !e.question_ids.is_empty()).collect();
    let mut out = Vec::with_capacity(2 * with_q.len());
    for (k, ex) in with_q.iter().enumerate() {
        let (context, types) = source.select(ex)?;
        let first = types.iter().position(|&t| t == 1);
        let last = types.iter().rposition(|&t| t == 1);
        let (Some(first), Some(last)) = (first, last) else {
            continue;
        };
        out.push(QaExample {
            question: ex.question_ids.clone(),
            context: context.clone(),
            start: first + 1,
            end: last + 1,
            answer_type: match ex.answer_kind {
                AnswerKind::Long => AnswerType::LongAnswer,
                AnswerKind::Short => AnswerType::ShortAnswer,
            },
        });
        if let Some(other) = with_q[k + 1..]
            .iter()
            .chain(&with_q[..k])
            .find(|o| o.context_ids != ex.context_ids)
        {
            let (context, _) = source.select(other)?;
            out.push(QaExample {
                question: ex.question_ids.clone(),
                context,
                start: 0,
                end: 0,
                answer_type: AnswerType::Undetermined,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    train_loss: f64,
}

pub fn train_qa(args: &TrainQaArgs) -> Result<()> {
    let mut run = Run::start("train-qa");
    let mut cfg: QaRunConfig = match &args.config {
        Some(path) => {
            run.input(path);
            read_json(path)?
        }
        None => QaRunConfig {
            model: None,
            train: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
        },
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

    let (examples, vocab_size) = match (&args.data, args.synthetic) {
        (Some(path), _) => {
            let vocab_path = args
                .vocab
                .as_ref()
                .ok_or_else(|| CliError::input("--data needs --vocab"))?;
            run.input(path).input(vocab_path);
            let vocab = load_vocab(vocab_path)?;
            let data: Vec<PreparedExample> = read_jsonl(path)?;
            (examples_from_prepared(&data, args.context_source)?, vocab.len())
        }
        (None, Some(n)) => {
            let context_len = 12.min((args.synthetic_vocab.saturating_sub(5)) / 2).max(4);
            if args.synthetic_vocab <= 4 + 2 * context_len {
                return Err(CliError::input("--synthetic-vocab is too small"));
            }
            (
                synthetic_qa_examples(args.synthetic_vocab, n, context_len, cfg.train.seed),
                args.synthetic_vocab,
            )
        }
        (None, None) => return Err(CliError::input("either --data or --synthetic is required")),
    };
    if examples.is_empty() {
        return Err(CliError::input("no usable QA training examples"));
    }
    let model_cfg = match cfg.model.take() {
        Some(m) => m,
        None => JointQaConfig {
            max_len: examples
                .iter()
                .map(|e| e.question.len() + e.context.len() + 2)
                .max()
                .unwrap_or(0),
            ..JointQaConfig::toy(vocab_size)
        },
    };
    if model_cfg.vocab_size != vocab_size {
        return Err(CliError::input(format!(
            "QA model vocab_size {} does not match {vocab_size}",
            model_cfg.vocab_size
        )));
    }
    cfg.model = Some(model_cfg.clone());
    run.config(&cfg).seed(cfg.train.seed);

    let mut model = JointQaModel::new_random(model_cfg, cfg.train.seed)?;
    let history = model.train(&examples, &cfg.train)?;
    for (k, l) in history.iter().enumerate() {
        eprintln!("epoch {:>3}  loss {l:.4}", k + 1);
    }
    model.save(&args.out)?;
    write_csv(
        &args.out.join("train_log.csv"),
        history.iter().enumerate().map(|(k, &l)| LossRow {
            epoch: k + 1,
            train_loss: l,
        }),
    )?;
    run.output(&args.out);
    run.finish(&args.out.join("run_manifest.json"))
}
