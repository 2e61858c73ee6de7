//! Closed-ended scoring: answer extraction and normalization, majority voting,
//! the unbiased pass@k estimator, and grouped summaries of decode records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{DecodeRecord, MergeMode, PipelineKind};
use crate::types::StrategyKind;

/// A normalized answer string; equality is the correctness criterion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalAnswer(String);

impl CanonicalAnswer {
    pub fn new(raw: &str) -> Self {
        Self(normalize(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn numeric_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([+-]?)(\d+)(?:\.(\d+))?$").expect("static regex"))
}

fn canonical_number(word: &str) -> Option<String> {
    let caps = numeric_re().captures(word)?;
    let int = caps[2].trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = caps.get(3).map_or("", |m| m.as_str().trim_end_matches('0'));
    let mut out = String::new();
    if &caps[1] == "-" && (int != "0" || !frac.is_empty()) {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    Some(out)
}

/// Trims, lowercases, collapses whitespace runs to one space, and rewrites
/// every numeric word without leading zeros or a zero fractional tail
/// (`007.0` becomes `7`, `-0.50` becomes `-0.5`).
pub fn normalize(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .map(|w| canonical_number(w).unwrap_or_else(|| w.to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub enum ExtractionRule {
    /// Contents of the first `\boxed{...}`, braces balanced.
    BoxedMath,
    /// Last non-empty line, minus an optional `answer:` / `final answer:` label.
    FinalLine,
    /// First match of a custom regex; capture group 1 when the pattern has one.
    Regex(Regex),
}

impl FromStr for ExtractionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxed" | "boxed-math" => Ok(Self::BoxedMath),
            "final-line" => Ok(Self::FinalLine),
            _ => match s.strip_prefix("regex:") {
                Some(pat) => Regex::new(pat).map(Self::Regex).map_err(|e| Error::Pattern(e.to_string())),
                None => Err(Error::Pattern(format!("unknown extraction rule '{s}'"))),
            },
        }
    }
}

fn boxed(text: &str) -> Option<&str> {
    let start = text.find("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn final_line(text: &str) -> Option<&str> {
    let line = text.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    let lower = line.to_lowercase();
    for label in ["final answer:", "answer:"] {
        if lower.starts_with(label) {
            return Some(line[label.len()..].trim());
        }
    }
    Some(line)
}

pub fn extract_answer(text: &str, rule: &ExtractionRule) -> Option<CanonicalAnswer> {
    let raw = match rule {
        ExtractionRule::BoxedMath => boxed(text)?,
        ExtractionRule::FinalLine => final_line(text)?,
        ExtractionRule::Regex(re) => {
            let caps = re.captures(text)?;
            caps.get(1).or_else(|| caps.get(0))?.as_str()
        }
    };
    let answer = CanonicalAnswer::new(raw);
    (!answer.0.is_empty()).then_some(answer)
}

/// Most frequent answer, ignoring `None`; ties go to the answer seen first.
pub fn majority_vote(answers: &[Option<CanonicalAnswer>]) -> Option<CanonicalAnswer> {
    let mut counts: HashMap<&CanonicalAnswer, (usize, usize)> = HashMap::new();
    for (pos, a) in answers.iter().enumerate() {
        if let Some(a) = a {
            counts.entry(a).or_insert((0, pos)).0 += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|(_, (ca, pa)), (_, (cb, pb))| ca.cmp(cb).then(pb.cmp(pa)))
        .map(|(a, _)| a.clone())
}

/// Unbiased pass@k from n samples with c correct: 1 - C(n-c, k) / C(n, k),
/// evaluated as a running product so it never forms a binomial coefficient.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if c > n || k == 0 || k > n {
        return Err(Error::PassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldEntry {
    pub id: String,
    pub answer: String,
}

/// Reference answers keyed by question id.
pub type Gold = HashMap<String, CanonicalAnswer>;

pub fn gold_from_entries(entries: impl IntoIterator<Item = GoldEntry>) -> Gold {
    entries.into_iter().map(|e| (e.id, CanonicalAnswer::new(&e.answer))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub strategy: StrategyKind,
    pub k: usize,
    pub n: usize,
    pub merge_mode: MergeMode,
    pub pipeline: PipelineKind,
}

impl GroupKey {
    pub fn of(r: &DecodeRecord) -> Self {
        Self { strategy: r.strategy, k: r.k, n: r.n, merge_mode: r.merge_mode, pipeline: r.pipeline }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    #[serde(flatten)]
    pub key: GroupKey,
    pub records: usize,
    pub invalid: usize,
    pub scored: usize,
    /// Accuracy of the merged answer over records with a gold answer.
    pub ensemble_accuracy: Option<f64>,
    /// Accuracy of a majority vote over each record's solo answers.
    pub mv_accuracy: Option<f64>,
    pub mean_answer_len: f64,
    pub mean_reasoning_len: f64,
    pub min_reasoning_len: Option<usize>,
    pub max_reasoning_len: Option<usize>,
    pub forced_traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub groups: Vec<GroupSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Whether a record's merged answer matches the gold answer, if it has one.
/// Invalid records carry no answer and score false.
pub fn score(record: &DecodeRecord, gold: &Gold, rule: &ExtractionRule) -> Option<bool> {
    let want = gold.get(&record.id)?;
    Some(extract_answer(&record.answer_text, rule).as_ref() == Some(want))
}

/// Whether the majority vote over a record's solo answers matches gold.
/// Invalid records score false; valid ones without solo answers are unscored.
pub fn score_vote(record: &DecodeRecord, gold: &Gold, rule: &ExtractionRule) -> Option<bool> {
    let want = gold.get(&record.id)?;
    if !record.valid {
        return Some(false);
    }
    let answers: Vec<_> = record.solo_answers.as_ref()?.iter().map(|a| extract_answer(a, rule)).collect();
    Some(majority_vote(&answers).as_ref() == Some(want))
}

/// Per-configuration means, counts and selected-trace length statistics,
/// ordered by group key.
pub fn summarize(records: &[DecodeRecord], gold: &Gold, rule: &ExtractionRule) -> Result<Summary> {
    let Some(first) = records.first() else {
        return Ok(Summary { schema_version: crate::pipeline::SCHEMA_VERSION, groups: Vec::new() });
    };
    if let Some(r) = records.iter().find(|r| r.schema_version != first.schema_version) {
        return Err(Error::MixedSchema(first.schema_version, r.schema_version));
    }
    let mut groups: BTreeMap<GroupKey, Vec<&DecodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(GroupKey::of(r)).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|(key, rs)| {
            let valid: Vec<&DecodeRecord> = rs.iter().copied().filter(|r| r.valid).collect();
            let scores: Vec<bool> = rs.iter().filter_map(|r| score(r, gold, rule)).collect();
            let votes: Vec<bool> = rs.iter().filter_map(|r| score_vote(r, gold, rule)).collect();
            let lens: Vec<usize> = valid
                .iter()
                .flat_map(|r| r.selected.iter().filter_map(|&i| r.traces.get(i)?.reasoning_len))
                .collect();
            GroupSummary {
                key,
                records: rs.len(),
                invalid: rs.len() - valid.len(),
                scored: scores.len(),
                ensemble_accuracy: mean(scores.iter().map(|&b| b as u8 as f64)),
                mv_accuracy: mean(votes.iter().map(|&b| b as u8 as f64)),
                mean_answer_len: mean(valid.iter().map(|r| r.answer.len() as f64)).unwrap_or(0.0),
                mean_reasoning_len: mean(lens.iter().map(|&l| l as f64)).unwrap_or(0.0),
                min_reasoning_len: lens.iter().copied().min(),
                max_reasoning_len: lens.iter().copied().max(),
                forced_traces: valid.iter().map(|r| r.forced_traces().len()).sum(),
            }
        })
        .collect();
    Ok(Summary { schema_version: first.schema_version, groups })
}
