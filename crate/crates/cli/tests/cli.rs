use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const WORDS: [&str; 16] = [
    "river", "stone", "bridge", "north", "city", "harbor", "tower", "garden", "winter", "market", "castle", "forest",
    "valley", "island", "summer", "lantern",
];

fn sqgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sqgen(args);
    assert!(
        out.status.success(),
        "sqgen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_lines(path: &Path, values: &[Value]) {
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

/// Short-answer records whose question repeats the tagged span.
fn nq_records(n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| {
            let ctx: Vec<&str> = (0..6).map(|k| WORDS[(i * 5 + k * 3) % WORDS.len()]).collect();
            let context = ctx.join(" ");
            let start = ctx[0].len() + 1;
            let end = start + ctx[1].len() + 1 + ctx[2].len();
            json!({
                "id": format!("q{i}"),
                "title": "",
                "question": format!("where {} {} {} {}", ctx[1], ctx[2], ctx[3], ctx[4]),
                "context": context,
                "short_spans": [[start, end]],
                "p_tag": true,
            })
        })
        .collect()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let mut text: Vec<String> = WORDS.iter().map(|w| format!("{w} where {w}")).collect();
        text.push("the cnn said -- a new report".into());
        fs::write(f.path("corpus.txt"), text.join("\n")).unwrap();
        ok(&[
            "build-vocab",
            "--kind",
            "text",
            "--input",
            p(&f.path("corpus.txt")),
            "--size",
            "80",
            "--out",
            p(&f.path("vocab.txt")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn prepare_nq(&self, name: &str, records: &[Value]) -> (PathBuf, Output) {
        let raw = self.path(&format!("{name}.raw.jsonl"));
        write_lines(&raw, records);
        let out = self.path(&format!("{name}.jsonl"));
        let res = ok(&[
            "prepare",
            "--kind",
            "nq",
            "--input",
            p(&raw),
            "--out",
            p(&out),
            "--vocab",
            p(&self.path("vocab.txt")),
        ]);
        (out, res)
    }

    fn vocab_len(&self) -> usize {
        fs::read_to_string(self.path("vocab.txt"))
            .unwrap()
            .lines()
            .take_while(|l| !l.starts_with('#'))
            .count()
    }

    fn small_config(&self) -> PathBuf {
        let cfg = json!({
            "model": {
                "vocab_size": self.vocab_len(),
                "d_model": 16, "n_heads": 2, "encoder_layers": 1, "decoder_lm_layers": 1,
                "cross_layers": 1, "ffn_dim": 32, "max_context": 64, "max_question": 24,
                "use_pointer": true, "use_decoder_lm": true, "use_type_ids": true
            },
            "train": { "lr": 0.003, "batch_size": 4, "epochs": 2, "seed": 5 }
        });
        let path = self.path("config.json");
        fs::write(&path, cfg.to_string()).unwrap();
        path
    }

    fn train(&self, data: &Path, out: &str, extra: &[&str]) -> (PathBuf, Output) {
        let dir = self.path(out);
        let cfg = self.small_config();
        let vocab = self.path("vocab.txt");
        let mut args = vec![
            "train",
            "--data",
            p(data),
            "--dev",
            p(data),
            "--config",
            p(&cfg),
            "--vocab",
            p(&vocab),
            "--out",
            p(&dir),
        ];
        args.extend_from_slice(extra);
        let res = sqgen(&args);
        (dir, res)
    }
}

#[test]
fn prepare_reports_rejections() {
    let f = Fixture::new();
    let mut records = nq_records(3);
    records[1]["context"] = json!(vec!["river stone"; 400].join(" "));
    records[1]["short_spans"] = json!([[0, 5]]);
    let (out, res) = f.prepare_nq("nq", &records);
    assert_eq!(lines(&out).len(), 2);
    let stderr = String::from_utf8(res.stderr).unwrap();
    let hist: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(hist, json!({"context_too_long": 1}));
    assert!(f.path("nq.jsonl.manifest.json").exists());
}

#[test]
fn prepare_news_strips_dateline() {
    let f = Fixture::new();
    let raw = f.path("news.raw.jsonl");
    write_lines(
        &raw,
        &[json!({"id": "a1", "article": "north city (CNN) -- river stone bridge\n\n@highlight\n\ngarden tower"})],
    );
    let out = f.path("news.jsonl");
    ok(&["prepare", "--kind", "news", "--input", p(&raw), "--out", p(&out), "--vocab", p(&f.path("vocab.txt"))]);
    let ex = &lines(&out)[0];
    let ids: Vec<u64> = serde_json::from_value(ex["context_ids"].clone()).unwrap();
    assert!(!ids.is_empty());
    assert!(ex["highlight_ids"].is_array());
    assert_eq!(ex["answer_kind"], "LONG");
}

#[test]
fn prepare_empty_and_missing_input() {
    let f = Fixture::new();
    let (out, _) = f.prepare_nq("empty", &[]);
    assert_eq!(fs::read_to_string(out).unwrap(), "");
    let res = sqgen(&[
        "prepare",
        "--kind",
        "nq",
        "--input",
        p(&f.path("missing.jsonl")),
        "--out",
        p(&f.path("x.jsonl")),
        "--vocab",
        p(&f.path("vocab.txt")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn stats_and_split() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(10));
    let res = ok(&["stats", "--data", p(&data)]);
    let stats: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(stats["n_examples"], 10);
    ok(&[
        "split",
        "--data",
        p(&data),
        "--ratio",
        "0.8",
        "--train-out",
        p(&f.path("train.jsonl")),
        "--dev-out",
        p(&f.path("dev.jsonl")),
    ]);
    assert_eq!(lines(&f.path("train.jsonl")).len(), 8);
    assert_eq!(lines(&f.path("dev.jsonl")).len(), 2);
}

#[test]
fn train_generate_and_score() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(8));

    let (run_a, res) = f.train(&data, "run_a", &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["epoch-1", "epoch-2", "best", "best_epoch.txt", "train_log.csv", "run_manifest.json"] {
        assert!(run_a.join(name).exists(), "missing {name}");
    }
    let log = fs::read_to_string(run_a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let (run_b, _) = f.train(&data, "run_b", &[]);
    assert_eq!(log, fs::read_to_string(run_b.join("train_log.csv")).unwrap());
    assert_eq!(
        fs::read(run_a.join("best/weights.bin")).unwrap(),
        fs::read(run_b.join("best/weights.bin")).unwrap()
    );

    let ckpt = run_a.join("best");
    let vocab = f.path("vocab.txt");
    let gen = |name: &str, extra: &[&str]| {
        let out = f.path(name);
        let mut args = vec![
            "generate",
            "--checkpoint",
            p(&ckpt),
            "--vocab",
            p(&vocab),
            "--data",
            p(&data),
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        fs::read_to_string(out).unwrap()
    };
    let greedy = gen("greedy.jsonl", &["--mode", "greedy"]);
    let beam1 = gen("beam1.jsonl", &["--mode", "beam", "--beam", "1"]);
    assert_eq!(greedy, beam1);
    assert_eq!(greedy.lines().count(), 8);
    let n1 = gen("n1.jsonl", &["--mode", "nucleus", "--temperature", "1.0", "--seed", "9"]);
    let n2 = gen("n2.jsonl", &["--mode", "nucleus", "--temperature", "1.0", "--seed", "9"]);
    assert_eq!(n1, n2);
    gen("beam3.jsonl", &[]);

    // Gold questions as candidates score 100.
    let records = nq_records(8);
    let cands: Vec<Value> = records
        .iter()
        .map(|r| json!({"id": r["id"], "question_text": r["question"], "logprob": 0.0}))
        .collect();
    write_lines(&f.path("gold.jsonl"), &cands);
    let res = ok(&[
        "eval",
        "gen",
        "--candidates",
        p(&f.path("gold.jsonl")),
        "--references",
        p(&data),
        "--vocab",
        p(&vocab),
        "--out",
        p(&f.path("report.json")),
        "--per-example",
        p(&f.path("per_example.csv")),
    ]);
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((report["bleu4"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(report["n"], 8);
    assert_eq!(fs::read_to_string(f.path("per_example.csv")).unwrap().lines().count(), 9);

    let res = ok(&[
        "eval",
        "qa",
        "--input",
        &format!("model={}", p(&f.path("beam3.jsonl"))),
        "--input",
        &format!("gold={}", p(&f.path("gold.jsonl"))),
        "--data",
        p(&data),
        "--vocab",
        p(&vocab),
        "--out-dir",
        p(&f.path("qa")),
    ]);
    let means: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(means.as_array().unwrap().len(), 2);
    for name in ["scores.csv", "scores.jsonl", "means.csv", "scatter.svg"] {
        assert!(f.path("qa").join(name).exists());
    }

    let mismatch = f.path("vocab_small.txt");
    ok(&["build-vocab", "--kind", "text", "--input", p(&f.path("corpus.txt")), "--size", "60", "--out", p(&mismatch)]);
    let res = sqgen(&[
        "generate",
        "--checkpoint",
        p(&ckpt),
        "--vocab",
        p(&mismatch),
        "--data",
        p(&data),
        "--out",
        p(&f.path("bad.jsonl")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(4));
    let (dir, res) = f.train(&data, "run0", &["--epochs", "0"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(dir.join("epoch-0/weights.bin").exists());
    assert!(!dir.join("epoch-1").exists());
    assert_eq!(fs::read_to_string(dir.join("best_epoch.txt")).unwrap(), "epoch-0\n");
}

#[test]
fn divergence_exits_with_numerical_failure() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(4));
    let (_, res) = f.train(&data, "run_nan", &["--lr", "1e300"]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn eval_gen_needs_references() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(2));
    write_lines(&f.path("c.jsonl"), &[json!({"id": "nope", "question_text": "river", "logprob": 0.0})]);
    let res = sqgen(&[
        "eval",
        "gen",
        "--candidates",
        p(&f.path("c.jsonl")),
        "--references",
        p(&data),
        "--vocab",
        p(&f.path("vocab.txt")),
        "--out",
        p(&f.path("r.json")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn qa_stub_scores_copied_questions_as_answerable() {
    let f = Fixture::new();
    let (data, _) = f.prepare_nq("nq", &nq_records(3));
    let cands: Vec<Value> = nq_records(3)
        .iter()
        .map(|r| json!({"id": r["id"], "question_text": r["context"], "logprob": 0.0}))
        .collect();
    write_lines(&f.path("copy.jsonl"), &cands);
    ok(&[
        "eval",
        "qa",
        "--input",
        &format!("copy={}", p(&f.path("copy.jsonl"))),
        "--data",
        p(&data),
        "--vocab",
        p(&f.path("vocab.txt")),
        "--out-dir",
        p(&f.path("qa")),
    ]);
    for row in lines(&f.path("qa/scores.jsonl")) {
        assert!(row["s_ans"].as_f64().unwrap() > 0.0, "{row}");
    }
}

fn annotation(article: &str, annotator: usize, on: bool) -> Value {
    let flags: serde_json::Map<String, Value> = ["context", "irrelevant", "contradiction", "peripheral", "span", "entire", "none"]
        .iter()
        .map(|k| (k.to_string(), json!(on)))
        .collect();
    json!({"article_id": article, "annotator_id": annotator.to_string(), "flags": flags})
}

#[test]
fn correlate_identity_and_unanimity() {
    let f = Fixture::new();
    let scores: Vec<Value> = (0..6)
        .map(|i| {
            let x = if i % 2 == 0 { 1.0 } else { 0.0 };
            json!({"tag": "m", "id": format!("a{i}"), "s_ans": x, "s_gra": x})
        })
        .collect();
    write_lines(&f.path("scores.jsonl"), &scores);
    let ann: Vec<Value> = (0..6)
        .flat_map(|i| (0..3).map(move |k| annotation(&format!("a{i}"), k, i % 2 == 0)))
        .collect();
    write_lines(&f.path("ann.jsonl"), &ann);
    let res = ok(&[
        "eval",
        "correlate",
        "--scores",
        p(&f.path("scores.jsonl")),
        "--annotations",
        p(&f.path("ann.jsonl")),
        "--out",
        p(&f.path("corr.json")),
    ]);
    let table: Value = serde_json::from_slice(&res.stdout).unwrap();
    for (_, per) in table.as_object().unwrap() {
        for (_, r) in per.as_object().unwrap() {
            assert!((r.as_f64().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    let res = ok(&[
        "eval",
        "unanimity",
        "--annotations",
        p(&f.path("ann.jsonl")),
        "--flags",
        "span,entire",
        "--out",
        p(&f.path("u.json")),
    ]);
    let u: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(u["span"]["true_pct"], 50.0);
    assert_eq!(u["span"]["unanimous"], 6);

    let res = sqgen(&[
        "eval",
        "unanimity",
        "--annotations",
        p(&f.path("missing.jsonl")),
        "--out",
        p(&f.path("u2.json")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn train_qa_synthetic() {
    let f = Fixture::new();
    let out = f.path("qa_model");
    ok(&["train-qa", "--synthetic", "6", "--epochs", "2", "--out", p(&out)]);
    assert!(out.join("weights.bin").exists());
    assert_eq!(fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(), 3);
}

#[test]
fn invalid_thread_count_is_input_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_sqgen"))
        .args(["stats", "--data", "/nonexistent"])
        .env("SQGEN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
