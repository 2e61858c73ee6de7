//! Trace lifecycle: delimiter detection, repeated-suffix trimming and the
//! N-to-K selection strategies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Phase, StrategyConfig, StrategyKind, TokenId, Trace, Vocabulary};

/// End index of the first occurrence of the delimiter in `trace.generated`.
pub fn detect_delimiter(trace: &Trace, vocab: &Vocabulary) -> Option<usize> {
    find_delimiter(trace.generated(), vocab.delimiter())
}

pub(crate) fn find_delimiter(haystack: &[TokenId], delimiter: &[TokenId]) -> Option<usize> {
    if delimiter.is_empty() || haystack.len() < delimiter.len() {
        return None;
    }
    haystack.windows(delimiter.len()).position(|w| w == delimiter).map(|start| start + delimiter.len())
}

/// Number of consecutive copies of the final `block` tokens at the end of `seq`.
fn trailing_copies(seq: &[TokenId], block: usize) -> usize {
    let tail = &seq[seq.len() - block..];
    let mut m = 1;
    while seq.len() >= (m + 1) * block && &seq[seq.len() - (m + 1) * block..seq.len() - m * block] == tail {
        m += 1;
    }
    m
}

/// Longest repeated suffix region as (block, copies), shortest block on ties.
fn best_repeat(seq: &[TokenId], min_block: usize, max_block: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for b in min_block..=max_block.min(seq.len() / 2) {
        let m = trailing_copies(seq, b);
        if m >= 2 && best.is_none_or(|(bb, bm)| m * b > bb * bm) {
            best = Some((b, m));
        }
    }
    best
}

/// Removes a degenerate repeated suffix, keeping a single copy of the block.
///
/// Every block length in `min_block..=max_block` is scanned for a suffix made
/// of m >= 2 back-to-back copies of the final `b` tokens. The candidate with
/// the longest repeated region (m * b) wins, and the shortest block wins among
/// equal regions, so `c d c d c d c d` collapses to one `c d` rather than one
/// `c d c d`. The kept copy is scanned again until no repeat remains, which
/// makes the operation idempotent. `reasoning` must not include the delimiter.
pub fn trim_repeated_suffix(reasoning: &[TokenId], min_block: usize, max_block: usize) -> Result<Vec<TokenId>> {
    if min_block < 1 || min_block > max_block {
        return Err(Error::TrimBounds { min: min_block, max: max_block });
    }
    let mut len = reasoning.len();
    while let Some((b, m)) = best_repeat(&reasoning[..len], min_block, max_block) {
        len -= (m - 1) * b;
    }
    Ok(reasoning[..len].to_vec())
}

/// Applies [`trim_repeated_suffix`] to a finished trace's reasoning and
/// reattaches the delimiter. Returns the trace unchanged (still `Finished`)
/// when nothing repeats, otherwise a `Trimmed` trace.
pub fn trim_trace(trace: &Trace, vocab: &Vocabulary, min_block: usize, max_block: usize) -> Result<Trace> {
    let end = trace.delimiter_end().ok_or_else(|| Error::Trace("cannot trim a trace that is still thinking".into()))?;
    let body = &trace.generated()[..end - vocab.delimiter().len()];
    let trimmed = trim_repeated_suffix(body, min_block, max_block)?;
    if trimmed.len() == body.len() {
        return Ok(trace.clone());
    }
    let mut reasoning = trimmed;
    reasoning.extend_from_slice(vocab.delimiter());
    Ok(trace.with_reasoning(reasoning, Phase::Trimmed))
}

/// A trace reaching its delimiter (or being force-closed) during thinking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub index: usize,
    /// 1-based thinking step at which the trace completed.
    pub step: usize,
    /// True when the trace hit the thinking budget and had the delimiter appended.
    pub forced: bool,
}

/// The N sampled traces plus the append-only log of completions, which is the
/// authoritative order for early-ready selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePool {
    traces: Vec<Trace>,
    completions: Vec<Completion>,
}

impl TracePool {
    pub fn new(traces: Vec<Trace>) -> Self {
        Self { traces, completions: Vec::new() }
    }

    /// Builds a pool from finished traces and an explicit completion log.
    pub fn with_log(traces: Vec<Trace>, completions: Vec<Completion>) -> Result<Self> {
        let mut seen = vec![false; traces.len()];
        for c in &completions {
            let Some(trace) = traces.get(c.index) else {
                return Err(Error::Trace(format!("completion for unknown trace {}", c.index)));
            };
            if seen[c.index] || !trace.is_ready() {
                return Err(Error::Trace(format!("inconsistent completion entry for trace {}", c.index)));
            }
            seen[c.index] = true;
        }
        if traces.iter().zip(&seen).any(|(t, &s)| t.is_ready() != s) {
            return Err(Error::Trace("every ready trace needs exactly one completion entry".into()));
        }
        Ok(Self { traces, completions })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Indices of traces past their delimiter, ascending.
    pub fn ready(&self) -> Vec<usize> {
        self.traces.iter().enumerate().filter(|(_, t)| t.is_ready()).map(|(i, _)| i).collect()
    }

    pub(crate) fn trace_mut(&mut self, index: usize) -> &mut Trace {
        &mut self.traces[index]
    }

    pub(crate) fn record(&mut self, completion: Completion) {
        self.completions.push(completion);
    }
}

/// The selection precondition is not met yet; keep thinking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("not ready: {ready} of {needed} required traces have finished")]
pub struct NotReady {
    pub ready: usize,
    pub needed: usize,
}

/// Picks the K traces to merge, returned in ascending index order.
pub fn select_traces(pool: &TracePool, config: &StrategyConfig) -> Result<Vec<usize>, NotReady> {
    let ready = pool.ready();
    let mut chosen = match config.kind {
        StrategyKind::DirectMerge | StrategyKind::ShortestK => {
            if ready.len() < pool.len() || pool.len() < config.k {
                return Err(NotReady { ready: ready.len(), needed: pool.len().max(config.k) });
            }
            if config.kind == StrategyKind::DirectMerge {
                ready
            } else {
                let mut by_len: Vec<(usize, usize)> = ready
                    .iter()
                    .map(|&i| (pool.traces()[i].reasoning_len().expect("ready trace has a delimiter"), i))
                    .collect();
                by_len.sort_unstable();
                by_len.into_iter().take(config.k).map(|(_, i)| i).collect()
            }
        }
        StrategyKind::EarlyReady => {
            if pool.completions().len() < config.k {
                return Err(NotReady { ready: pool.completions().len(), needed: config.k });
            }
            let mut log = pool.completions().to_vec();
            // the log is append-only so this only reorders simultaneous completions
            log.sort_by_key(|c| (c.step, c.index));
            log.into_iter().take(config.k).map(|c| c.index).collect()
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// The thinking step at which the strategy's selection first becomes
/// possible, replayed from a completion log over `n` traces.
pub fn merge_start_step(log: &[Completion], n: usize, config: &StrategyConfig) -> Option<usize> {
    let mut steps: Vec<usize> = log.iter().map(|c| c.step).collect();
    steps.sort_unstable();
    let needed = match config.kind {
        StrategyKind::EarlyReady => config.k,
        StrategyKind::DirectMerge | StrategyKind::ShortestK => n,
    };
    if needed == 0 {
        return Some(0);
    }
    steps.get(needed - 1).copied()
}
