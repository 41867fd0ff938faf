use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sqgen_core::Vocab;

use crate::error::{CliError, Context, Result};

pub const GIT_DESCRIBE: &str = env!("SQGEN_GIT_DESCRIBE");

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).context(format_args!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.context(format_args!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).context(format_args!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).context(format_args!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).context(format_args!("invalid JSON in {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).context(format_args!("cannot create {}", parent.display()))?;
    }
    let file = File::create(path).context(format_args!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    let fail = |e: &dyn std::fmt::Display| CliError::input(format!("cannot write {}: {e}", path.display()));
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| fail(&e))?;
        w.write_all(b"\n").map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("cannot serialize")?;
    text.push('\n');
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .context(format_args!("cannot write {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).context(format_args!("cannot write {}", path.display()))?;
    }
    w.flush().context(format_args!("cannot write {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .context(format_args!("cannot write {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::load(path).context(format_args!("cannot load vocabulary {}", path.display()))
}

/// `<path>.manifest.json` next to a file output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub git_describe: &'static str,
    pub wall_seconds: f64,
}

/// Collects the manifest of one artifact-producing command.
pub struct Run {
    started: Instant,
    manifest: RunManifest,
}

impl Run {
    pub fn start(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                seed: None,
                git_describe: GIT_DESCRIBE,
                wall_seconds: 0.0,
            },
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> &mut Self {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        write_json(path, &self.manifest)
    }
}
