use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use sqgen_core::genmetrics::{corpus_report, example_scores, metric_tokens};
use sqgen_core::qaeval::{
    correlation_table, qa_score, unanimity_ratios, AnnotationRecord, Flag, JointQaModel, LexicalOverlapScorer,
    QaScorer, ScoredItem,
};
use sqgen_core::PreparedExample;

use super::generate::{ContextSource, Generation};
use crate::error::{CliError, Context, Result};
use crate::io::{load_vocab, manifest_path_for, read_jsonl, write_csv, write_json, write_jsonl, write_text, Run};
use crate::svg;

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Reference-based metrics of generated questions.
    Gen(EvalGenArgs),
    /// Answerability and granularity of generated questions under a QA model.
    Qa(EvalQaArgs),
    /// Pearson correlation of QA scores with human flags.
    Correlate(CorrelateArgs),
    /// Share of unanimous yes/no judgements per flag.
    Unanimity(UnanimityArgs),
}

pub fn eval(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Gen(a) => eval_gen(a),
        EvalCommand::Qa(a) => eval_qa(a),
        EvalCommand::Correlate(a) => correlate(a),
        EvalCommand::Unanimity(a) => unanimity(a),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalGenArgs {
    /// Output of `generate`.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Prepared examples holding the gold questions; repeated ids give multiple references.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_example: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExampleRow<'a> {
    id: &'a str,
    bleu1: f64,
    bleu4: f64,
    meteor_lite: f64,
    rouge_l: f64,
}

fn eval_gen(args: &EvalGenArgs) -> Result<()> {
    let mut run = Run::start("eval gen");
    run.config(args).input(&args.candidates).input(&args.references).input(&args.vocab);
    let vocab = load_vocab(&args.vocab)?;
    let cands: Vec<Generation> = read_jsonl(&args.candidates)?;
    let mut refs: HashMap<String, Vec<Vec<String>>> = HashMap::new();
    for ex in read_jsonl::<PreparedExample>(&args.references)? {
        if ex.question_ids.is_empty() {
            continue;
        }
        let text = vocab.decode(&ex.question_ids).context(format_args!("example {}", ex.id))?;
        refs.entry(ex.id).or_default().push(metric_tokens(&text));
    }
    let mut cand_tokens = Vec::with_capacity(cands.len());
    let mut ref_tokens = Vec::with_capacity(cands.len());
    for c in &cands {
        let r = refs
            .get(&c.id)
            .ok_or_else(|| CliError::input(format!("no reference question for {}", c.id)))?;
        cand_tokens.push(metric_tokens(&c.question_text));
        ref_tokens.push(r.clone());
    }
    if cands.is_empty() {
        return Err(CliError::input("no candidates to score"));
    }
    let report = corpus_report(&cand_tokens, &ref_tokens).context("cannot score")?.percent();
    write_json(&args.out, &report)?;
    run.output(&args.out);
    if let Some(path) = &args.per_example {
        let mut rows = Vec::with_capacity(cands.len());
        for ((c, ct), rt) in cands.iter().zip(&cand_tokens).zip(&ref_tokens) {
            let s = example_scores(ct, rt).context("cannot score")?;
            rows.push(ExampleRow {
                id: &c.id,
                bleu1: 100.0 * s.bleu1,
                bleu4: 100.0 * s.bleu4,
                meteor_lite: 100.0 * s.meteor_lite,
                rouge_l: 100.0 * s.rouge_l,
            });
        }
        write_csv(path, rows)?;
        run.output(path);
    }
    println!("{}", serde_json::to_string(&report).context("cannot serialize")?);
    run.finish(&manifest_path_for(&args.out))
}

#[derive(Debug, Args, Serialize)]
pub struct EvalQaArgs {
    /// `TAG=PATH` of a `generate` output; repeat to compare models.
    #[arg(long = "input", required = true, value_parser = parse_tagged)]
    pub inputs: Vec<(String, PathBuf)>,
    /// Prepared examples supplying the contexts.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Joint QA checkpoint; the lexical-overlap stand-in is used when absent.
    #[arg(long)]
    pub qa_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ContextSource::Article)]
    pub context_source: ContextSource,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_tagged(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((tag, path)) if !tag.is_empty() && !path.is_empty() => Ok((tag.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected TAG=PATH, got {s:?}")),
    }
}

/// One scored generation as written to `scores.csv` and `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub tag: String,
    pub id: String,
    pub s_ans: f64,
    pub s_gra: f64,
}

#[derive(Debug, Serialize)]
struct MeanRow<'a> {
    tag: &'a str,
    n: usize,
    mean_s_ans: f64,
    mean_s_gra: f64,
}

fn eval_qa(args: &EvalQaArgs) -> Result<()> {
    let mut run = Run::start("eval qa");
    run.config(args).input(&args.data).input(&args.vocab);
    let vocab = load_vocab(&args.vocab)?;
    let joint;
    let scorer: &dyn QaScorer = match &args.qa_checkpoint {
        Some(path) => {
            run.input(path);
            joint = JointQaModel::load(path)?;
            if joint.config().vocab_size != vocab.len() {
                return Err(CliError::input(format!(
                    "QA model expects {} tokens, vocabulary has {}",
                    joint.config().vocab_size,
                    vocab.len()
                )));
            }
            &joint
        }
        None => &LexicalOverlapScorer,
    };
    let data: HashMap<String, PreparedExample> = read_jsonl::<PreparedExample>(&args.data)?
        .into_iter()
        .map(|e| (e.id.clone(), e))
        .collect();

    let mut rows = Vec::new();
    for (tag, path) in &args.inputs {
        run.input(path);
        for g in read_jsonl::<Generation>(path)? {
            let ex = data
                .get(&g.id)
                .ok_or_else(|| CliError::input(format!("{}: unknown example id {}", path.display(), g.id)))?;
            let (context, _) = args.context_source.select(ex)?;
            let question = vocab.encode(&g.question_text);
            let s = qa_score(scorer, &question, &context).map_err(CliError::from)?;
            rows.push(ScoreRow {
                tag: tag.clone(),
                id: g.id,
                s_ans: s.s_ans,
                s_gra: s.s_gra,
            });
        }
    }

    let mut by_tag: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in &rows {
        by_tag.entry(&r.tag).or_default().push(r);
    }
    let means: Vec<MeanRow> = by_tag
        .iter()
        .map(|(tag, rs)| {
            let n = rs.len();
            MeanRow {
                tag,
                n,
                mean_s_ans: rs.iter().map(|r| r.s_ans).sum::<f64>() / n as f64,
                mean_s_gra: rs.iter().map(|r| r.s_gra).sum::<f64>() / n as f64,
            }
        })
        .collect();
    let series: Vec<(String, Vec<(f64, f64)>)> = by_tag
        .iter()
        .map(|(tag, rs)| (tag.to_string(), rs.iter().map(|r| (r.s_ans, r.s_gra)).collect()))
        .collect();

    let out = &args.out_dir;
    write_csv(&out.join("scores.csv"), &rows)?;
    write_jsonl(&out.join("scores.jsonl"), &rows)?;
    write_csv(&out.join("means.csv"), &means)?;
    write_text(&out.join("scatter.svg"), &svg::scatter(&series, "s_ans", "s_gra"))?;
    for name in ["scores.csv", "scores.jsonl", "means.csv", "scatter.svg"] {
        run.output(&out.join(name));
    }
    println!("{}", serde_json::to_string(&means).context("cannot serialize")?);
    run.finish(&out.join("run_manifest.json"))
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    /// `scores.jsonl` from `eval qa`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Restrict to one model tag; required when several are present.
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn correlate(args: &CorrelateArgs) -> Result<()> {
    let mut run = Run::start("eval correlate");
    run.config(args).input(&args.scores).input(&args.annotations);
    let rows: Vec<ScoreRow> = read_jsonl(&args.scores)?;
    let rows: Vec<ScoreRow> = match &args.tag {
        Some(t) => rows.into_iter().filter(|r| &r.tag == t).collect(),
        None => rows,
    };
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = rows.iter().find(|r| !ids.insert(r.id.as_str())) {
        return Err(CliError::input(format!("duplicate scores for {}; select one with --tag", dup.id)));
    }
    let items: Vec<ScoredItem> = rows
        .into_iter()
        .map(|r| ScoredItem {
            id: r.id,
            s_ans: r.s_ans,
            s_gra: r.s_gra,
        })
        .collect();
    let annotations: Vec<AnnotationRecord> = read_jsonl(&args.annotations)?;
    let table = correlation_table(&items, &annotations)?;
    write_json(&args.out, &table)?;
    println!("{}", serde_json::to_string(&table).context("cannot serialize")?);
    run.output(&args.out);
    run.finish(&manifest_path_for(&args.out))
}

#[derive(Debug, Args, Serialize)]
pub struct UnanimityArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Comma-separated flag names; all flags when absent.
    #[arg(long, value_delimiter = ',', value_parser = parse_flag)]
    pub flags: Vec<Flag>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_flag(s: &str) -> std::result::Result<Flag, String> {
    Flag::parse(s).ok_or_else(|| format!("unknown flag {s:?}"))
}

fn unanimity(args: &UnanimityArgs) -> Result<()> {
    let mut run = Run::start("eval unanimity");
    run.config(args).input(&args.annotations);
    let flags = if args.flags.is_empty() { Flag::ALL.to_vec() } else { args.flags.clone() };
    let annotations: Vec<AnnotationRecord> = read_jsonl(&args.annotations)?;
    let ratios = unanimity_ratios(&annotations, &flags)?;
    let named: BTreeMap<&str, _> = ratios.iter().map(|(f, u)| (f.name(), u)).collect();
    write_json(&args.out, &named)?;
    println!("{}", serde_json::to_string(&named).context("cannot serialize")?);
    run.output(&args.out);
    run.finish(&manifest_path_for(&args.out))
}
