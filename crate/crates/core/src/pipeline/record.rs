use serde::{Deserialize, Serialize};

use crate::sampling::Choice;
use crate::scheduler::TracePool;
use crate::types::{Phase, StopReason, StrategyKind, TokenId, Vocabulary};

/// Bumped whenever a field of [`DecodeRecord`] changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Mean of logits, then softmax.
    #[default]
    Logits,
    /// Mean of per-trace softmax distributions (ablation).
    Probs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    #[default]
    TwoStage,
    OneStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: usize,
    pub phase: Phase,
    /// Everything the trace generated while thinking.
    pub thinking: Vec<TokenId>,
    pub reasoning_len: Option<usize>,
    pub completion_step: Option<usize>,
    pub forced: bool,
    pub selected: bool,
    /// Reasoning length after suffix trimming, when trimming changed it.
    pub trimmed_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: TokenId,
    pub prob: f64,
    pub support: usize,
}

impl From<Choice> for StepRecord {
    fn from(c: Choice) -> Self {
        Self { token: c.token, prob: c.prob, support: c.support }
    }
}

/// Everything needed to audit or replay one decode; serialized as one JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub schema_version: u32,
    pub id: String,
    pub config_hash: String,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub k: usize,
    pub n: usize,
    pub merge_mode: MergeMode,
    pub pipeline: PipelineKind,
    pub prompt: Vec<TokenId>,
    pub traces: Vec<TraceRecord>,
    pub selected: Vec<usize>,
    /// Thinking step after which the merged answer started.
    pub merge_start_step: Option<usize>,
    pub answer: Vec<TokenId>,
    pub answer_text: String,
    pub stop_reason: Option<StopReason>,
    pub steps: Vec<StepRecord>,
    /// Independent per-trace answers for the selected traces, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solo_answers: Option<Vec<String>>,
    pub valid: bool,
    pub error: Option<String>,
}

impl DecodeRecord {
    /// True when no answer token precedes the completion of any selected trace.
    pub fn answer_follows_thinking(&self) -> bool {
        if self.answer.is_empty() {
            return true;
        }
        let Some(start) = self.merge_start_step else { return false };
        self.selected.iter().all(|&i| {
            self.traces.get(i).and_then(|t| t.completion_step).is_some_and(|s| s <= start)
        })
    }

    pub fn forced_traces(&self) -> Vec<usize> {
        self.traces.iter().filter(|t| t.forced).map(|t| t.index).collect()
    }
}

/// Answer tokens as text: decimal ids separated by spaces, trailing EOS dropped.
pub fn render_tokens(tokens: &[TokenId], vocab: &Vocabulary) -> String {
    let body = match tokens.last() {
        Some(&t) if t == vocab.eos_id() => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    body.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn trace_records(pool: &TracePool, selected: &[usize], trimmed: &[(usize, usize)]) -> Vec<TraceRecord> {
    pool.traces()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let completion = pool.completions().iter().find(|c| c.index == i);
            let trimmed_len = trimmed.iter().find(|(j, _)| *j == i).map(|&(_, l)| l);
            TraceRecord {
                index: i,
                phase: if trimmed_len.is_some() { Phase::Trimmed } else { t.phase() },
                thinking: t.generated().to_vec(),
                reasoning_len: t.reasoning_len(),
                completion_step: completion.map(|c| c.step),
                forced: completion.is_some_and(|c| c.forced),
                selected: selected.contains(&i),
                trimmed_len,
            }
        })
        .collect()
}
