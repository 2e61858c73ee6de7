//! `eval`: score a results file against gold answers.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;

use logit_ensemble::eval::{
    extract_answer, gold_from_entries, pass_at_k, score, score_vote, summarize, ExtractionRule, Gold, GoldEntry,
    GroupKey, GroupSummary,
};
use logit_ensemble::pipeline::DecodeRecord;

use crate::Exit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Majority vote over each record's solo answers.
    Mv,
    /// The merged answer.
    Ensemble,
    /// Unbiased pass@k over each record's solo answers.
    #[value(name = "pass_at_k")]
    PassAtK,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub k: usize,
    pub rule: ExtractionRule,
    pub allow_mixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    #[serde(flatten)]
    pub key: GroupKey,
    pub records: usize,
    pub invalid: usize,
    /// Metric of the selected mode.
    pub accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
    pub mv_accuracy: Option<f64>,
    pub mean_answer_len: f64,
    pub mean_reasoning_len: f64,
    pub min_reasoning_len: Option<usize>,
    pub max_reasoning_len: Option<usize>,
    pub forced_traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub mode: EvalMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub records: usize,
    pub scored: usize,
    /// Headline metric of the selected mode over all scored records.
    pub accuracy: Option<f64>,
    pub groups: Vec<GroupReport>,
    /// Result ids with no gold answer.
    pub unknown_ids: Vec<String>,
    /// Gold ids with no result record.
    pub missing_ids: Vec<String>,
}

#[derive(Debug)]
pub enum EvalError {
    Input(String),
    MixedConfig(Vec<String>),
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::Input(m) => f.write_str(m),
            EvalError::MixedConfig(h) => {
                write!(f, "results mix {} config hashes ({}); pass --allow-mixed to score them together", h.len(), h.join(", "))
            }
        }
    }
}

/// Four decimal places.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| EvalError::Input(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// pass@k of one record's solo answers; `None` without gold or solo answers.
fn record_pass_at_k(r: &DecodeRecord, gold: &Gold, rule: &ExtractionRule, k: usize) -> Result<Option<f64>, EvalError> {
    let Some(want) = gold.get(&r.id) else { return Ok(None) };
    if !r.valid {
        return Ok(Some(0.0));
    }
    let Some(solo) = &r.solo_answers else { return Ok(None) };
    let c = solo.iter().filter(|a| extract_answer(a, rule).as_ref() == Some(want)).count();
    pass_at_k(solo.len() as u64, c as u64, k as u64)
        .map(Some)
        .map_err(|e| EvalError::Input(format!("record {}: {e}", r.id)))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-record metric under `mode`; invalid records score zero.
fn metric(r: &DecodeRecord, gold: &Gold, opts: &EvalOptions) -> Result<Option<f64>, EvalError> {
    let as_f = |b: Option<bool>| b.map(|b| b as u8 as f64);
    Ok(match opts.mode {
        EvalMode::Ensemble => as_f(score(r, gold, &opts.rule)),
        EvalMode::Mv => as_f(score_vote(r, gold, &opts.rule)),
        EvalMode::PassAtK => record_pass_at_k(r, gold, &opts.rule, opts.k)?,
    })
}

pub fn evaluate(records: &[DecodeRecord], gold: &Gold, opts: &EvalOptions) -> Result<Report, EvalError> {
    let hashes: BTreeSet<&str> = records.iter().map(|r| r.config_hash.as_str()).collect();
    if hashes.len() > 1 && !opts.allow_mixed {
        return Err(EvalError::MixedConfig(hashes.into_iter().map(String::from).collect()));
    }
    if opts.mode != EvalMode::Ensemble && records.iter().any(|r| r.valid) && records.iter().all(|r| r.solo_answers.is_none()) {
        return Err(EvalError::Input("records carry no solo answers; decode with \"solo_answers\": true".into()));
    }
    let summary = summarize(records, gold, &opts.rule).map_err(|e| EvalError::Input(e.to_string()))?;
    let mut per_group: HashMap<GroupKey, Vec<f64>> = HashMap::new();
    let mut all = Vec::new();
    for r in records {
        if let Some(m) = metric(r, gold, opts)? {
            per_group.entry(GroupKey::of(r)).or_default().push(m);
            all.push(m);
        }
    }
    let groups = summary
        .groups
        .into_iter()
        .map(|g: GroupSummary| {
            let ms = per_group.remove(&g.key).unwrap_or_default();
            GroupReport {
                records: g.records,
                invalid: g.invalid,
                accuracy: mean(&ms).map(round4),
                ensemble_accuracy: g.ensemble_accuracy.map(round4),
                mv_accuracy: g.mv_accuracy.map(round4),
                mean_answer_len: round4(g.mean_answer_len),
                mean_reasoning_len: round4(g.mean_reasoning_len),
                min_reasoning_len: g.min_reasoning_len,
                max_reasoning_len: g.max_reasoning_len,
                forced_traces: g.forced_traces,
                key: g.key,
            }
        })
        .collect();
    let result_ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut unknown_ids: Vec<String> = result_ids.iter().filter(|id| !gold.contains_key(**id)).map(|s| s.to_string()).collect();
    unknown_ids.sort();
    let mut missing_ids: Vec<String> = gold.keys().filter(|id| !result_ids.contains(id.as_str())).cloned().collect();
    missing_ids.sort();
    Ok(Report {
        mode: opts.mode,
        k: (opts.mode == EvalMode::PassAtK).then_some(opts.k),
        records: records.len(),
        scored: all.len(),
        accuracy: mean(&all).map(round4),
        groups,
        unknown_ids,
        missing_ids,
    })
}

pub fn cmd_eval(results: &Path, gold_path: &Path, opts: &EvalOptions) -> Exit {
    let run = || -> Result<Report, EvalError> {
        let records: Vec<DecodeRecord> = read_jsonl(results)?;
        let gold = gold_from_entries(read_jsonl::<GoldEntry>(gold_path)?);
        evaluate(&records, &gold, opts)
    };
    match run() {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.unknown_ids.is_empty() && report.missing_ids.is_empty() {
                Exit::Success
            } else {
                for id in &report.unknown_ids {
                    eprintln!("eval: result id '{id}' has no gold answer");
                }
                for id in &report.missing_ids {
                    eprintln!("eval: gold id '{id}' has no result");
                }
                Exit::Partial
            }
        }
        Err(e) => {
            eprintln!("eval error: {e}");
            Exit::Config
        }
    }
}
