//! `decode`: run every prompt of a config through the ensemble decoder.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use logit_ensemble::backend::Backend;
use logit_ensemble::pipeline::{DecodeRecord, Decoder, SCHEMA_VERSION};
use logit_ensemble::TokenId;

use crate::config::{ConfigError, RunConfig};
use crate::Exit;

#[derive(Debug, Clone, Default)]
pub struct DecodeOptions {
    /// Process at most this many prompts (counted from the top of the file).
    pub limit: Option<usize>,
    /// Keep the existing output and skip prompts whose id is already in it.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub id: String,
    #[serde(default)]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DecodeSummary {
    pub written: usize,
    pub skipped: usize,
    pub invalid: usize,
}

pub fn read_prompts(path: &Path) -> Result<Vec<(String, Vec<TokenId>)>, ConfigError> {
    let file = File::open(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| ConfigError::Field { path: format!("{}:{}", path.display(), n + 1), message };
        let p: Prompt = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let tokens = match (p.tokens, p.text) {
            (Some(t), None) => t,
            (None, Some(_)) => {
                return Err(at("text prompts need a tokenizing backend; supply \"tokens\"".into()));
            }
            _ => return Err(at("exactly one of \"tokens\" or \"text\" is required".into())),
        };
        if !seen.insert(p.id.clone()) {
            return Err(at(format!("duplicate prompt id '{}'", p.id)));
        }
        out.push((p.id, tokens));
    }
    Ok(out)
}

/// Ids already present in an output file. A torn final line (no trailing
/// newline) is cut off so appending starts on a clean line.
fn existing_ids(path: &Path, config_hash: &str) -> Result<HashSet<String>, ConfigError> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(ConfigError::Io(path.to_path_buf(), e)),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        fs::write(path, &text).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    }
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let r: DecodeRecord = serde_json::from_str(line).map_err(|e| ConfigError::Field {
            path: format!("{}:{}", path.display(), n + 1),
            message: e.to_string(),
        })?;
        if r.config_hash != config_hash {
            return Err(ConfigError::Invalid(format!(
                "{} holds records from another configuration (hash {}); refusing to resume",
                path.display(),
                r.config_hash
            )));
        }
        ids.insert(r.id);
    }
    Ok(ids)
}

fn failed_record(config: &RunConfig, prompt: &[TokenId], error: String) -> DecodeRecord {
    DecodeRecord {
        schema_version: SCHEMA_VERSION,
        id: String::new(),
        config_hash: String::new(),
        seed: config.sampling.seed,
        strategy: config.strategy.kind,
        k: config.strategy.k,
        n: config.strategy.n,
        merge_mode: config.merge_mode,
        pipeline: config.pipeline,
        prompt: prompt.to_vec(),
        traces: Vec::new(),
        selected: Vec::new(),
        merge_start_step: None,
        answer: Vec::new(),
        answer_text: String::new(),
        stop_reason: None,
        steps: Vec::new(),
        solo_answers: None,
        valid: false,
        error: Some(error),
    }
}

/// Decodes the prompts and appends one JSONL record per prompt, in prompt
/// order, flushing after every chunk.
pub fn run_decode(config: &RunConfig, options: &DecodeOptions) -> Result<DecodeSummary, ConfigError> {
    let hash = config.hash()?;
    let mut prompts = read_prompts(&config.prompts)?;
    if let Some(limit) = options.limit {
        prompts.truncate(limit);
    }
    let mut summary = DecodeSummary::default();
    if options.resume {
        let done = existing_ids(&config.output, &hash)?;
        let before = prompts.len();
        prompts.retain(|(id, _)| !done.contains(id));
        summary.skipped = before - prompts.len();
    }
    let (backend, vocab) = config.build_backend()?;
    let backend: &dyn Backend = backend.as_ref();
    let decoder = Decoder::new(backend, vocab, config.strategy.clone(), config.sampling.clone())
        .map_err(|e| ConfigError::Invalid(e.to_string()))?
        .with_merge_mode(config.merge_mode)
        .with_solo_answers(config.solo_answers);

    if let Some(dir) = config.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ConfigError::Io(dir.to_path_buf(), e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(options.resume)
        .truncate(!options.resume)
        .open(&config.output)
        .map_err(|e| ConfigError::Io(config.output.clone(), e))?;
    let mut out = BufWriter::new(file);

    let workers = config.workers.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let io_err = |e| ConfigError::Io(config.output.clone(), e);
    for chunk in prompts.chunks(workers * 4) {
        let records: Vec<DecodeRecord> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(id, tokens)| {
                    let mut r = decoder
                        .run(tokens, config.pipeline)
                        .unwrap_or_else(|e| failed_record(config, tokens, e.to_string()));
                    r.id = id.clone();
                    r.config_hash = hash.clone();
                    r
                })
                .collect()
        });
        for r in &records {
            if !r.valid {
                summary.invalid += 1;
                eprintln!("decode: {} failed: {}", r.id, r.error.as_deref().unwrap_or("unknown error"));
            }
            serde_json::to_writer(&mut out, r).map_err(|e| io_err(e.into()))?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
        summary.written += records.len();
    }
    Ok(summary)
}

pub fn cmd_decode(config_path: &Path, options: &DecodeOptions) -> Exit {
    let config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return Exit::Config;
        }
    };
    match run_decode(&config, options) {
        Ok(s) => {
            eprintln!("decode: {} written, {} skipped, {} failed", s.written, s.skipped, s.invalid);
            if s.invalid == 0 {
                Exit::Success
            } else {
                Exit::Partial
            }
        }
        Err(e) => {
            eprintln!("config error: {e}");
            Exit::Config
        }
    }
}
