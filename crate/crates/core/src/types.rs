//! Value types shared by the whole engine: vocabulary, traces, sessions and
//! the configuration records that drive a decode.
//!
//! Every type has a canonical JSON encoding (snake_case field names). Types
//! that carry invariants validate them on construction, and the vocabulary and
//! configuration records also validate when parsed from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Largest vocabulary the engine accepts (2^20 ids).
pub const MAX_VOCAB_SIZE: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr")]
pub struct Vocabulary {
    size: u32,
    eos_id: TokenId,
    pad_id: TokenId,
    delimiter: Vec<TokenId>,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    size: u32,
    eos_id: TokenId,
    pad_id: TokenId,
    delimiter: Vec<TokenId>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(r.size, r.eos_id, r.pad_id, r.delimiter)
    }
}

impl Vocabulary {
    pub fn new(size: u32, eos_id: TokenId, pad_id: TokenId, delimiter: Vec<TokenId>) -> Result<Self> {
        if size == 0 || size > MAX_VOCAB_SIZE {
            return Err(Error::Vocabulary(format!("size {size} outside 1..={MAX_VOCAB_SIZE}")));
        }
        if eos_id >= size || pad_id >= size {
            return Err(Error::Vocabulary("eos_id and pad_id must be < size".into()));
        }
        if eos_id == pad_id {
            return Err(Error::Vocabulary("pad_id must differ from eos_id".into()));
        }
        if delimiter.is_empty() {
            return Err(Error::Vocabulary("delimiter must be non-empty".into()));
        }
        if let Some(&bad) = delimiter.iter().find(|&&t| t >= size) {
            return Err(Error::Vocabulary(format!("delimiter id {bad} >= size {size}")));
        }
        if delimiter.contains(&pad_id) {
            return Err(Error::Vocabulary("delimiter must not contain pad_id".into()));
        }
        Ok(Self { size, eos_id, pad_id, delimiter })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn delimiter(&self) -> &[TokenId] {
        &self.delimiter
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thinking,
    Finished,
    Trimmed,
}

/// One reasoning context: the prompt plus the tokens sampled after it.
///
/// `delimiter_end` is the index one past the end of the first delimiter
/// occurrence in `generated`; it doubles as the trace's reasoning length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    prompt: Vec<TokenId>,
    generated: Vec<TokenId>,
    phase: Phase,
    delimiter_end: Option<usize>,
}

impl Trace {
    pub fn new(
        prompt: Vec<TokenId>,
        generated: Vec<TokenId>,
        phase: Phase,
        delimiter_end: Option<usize>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let trace = Self { prompt, generated, phase, delimiter_end };
        trace.validate(vocab)?;
        Ok(trace)
    }

    /// A fresh trace with nothing generated yet.
    pub fn thinking(prompt: Vec<TokenId>) -> Self {
        Self { prompt, generated: Vec::new(), phase: Phase::Thinking, delimiter_end: None }
    }

    /// Checks the phase / delimiter invariants. Deserialized traces are not
    /// validated automatically since validation needs the vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if let Some(&bad) = self.prompt.iter().chain(&self.generated).find(|&&t| !vocab.contains(t)) {
            return Err(Error::Trace(format!("token id {bad} outside vocabulary")));
        }
        match (self.phase, self.delimiter_end) {
            (Phase::Thinking, None) => Ok(()),
            (Phase::Thinking, Some(_)) => Err(Error::Trace("thinking trace cannot have a delimiter_end".into())),
            (_, None) => Err(Error::Trace("finished trace requires delimiter_end".into())),
            (_, Some(end)) => {
                if end > self.generated.len() {
                    return Err(Error::Trace(format!(
                        "delimiter_end {end} past generated length {}",
                        self.generated.len()
                    )));
                }
                if !self.generated[..end].ends_with(vocab.delimiter()) {
                    return Err(Error::Trace(format!("generated[..{end}] does not end with the delimiter")));
                }
                Ok(())
            }
        }
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.generated
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn delimiter_end(&self) -> Option<usize> {
        self.delimiter_end
    }

    pub fn is_ready(&self) -> bool {
        self.phase != Phase::Thinking
    }

    /// Tokens up to and including the delimiter (empty while thinking).
    pub fn reasoning(&self) -> &[TokenId] {
        &self.generated[..self.delimiter_end.unwrap_or(0)]
    }

    pub fn reasoning_len(&self) -> Option<usize> {
        self.delimiter_end
    }

    /// The context the answer phase conditions on: prompt ‖ reasoning.
    /// While thinking this is prompt ‖ generated.
    pub fn context(&self) -> Vec<TokenId> {
        let body = match self.delimiter_end {
            Some(end) => &self.generated[..end],
            None => &self.generated[..],
        };
        let mut ctx = Vec::with_capacity(self.prompt.len() + body.len());
        ctx.extend_from_slice(&self.prompt);
        ctx.extend_from_slice(body);
        ctx
    }

    /// Appends one thinking token. Returns `true` when it completes the
    /// delimiter, in which case the trace becomes `Finished`.
    pub fn push_thinking(&mut self, token: TokenId, vocab: &Vocabulary) -> bool {
        debug_assert_eq!(self.phase, Phase::Thinking);
        self.generated.push(token);
        if self.generated.ends_with(vocab.delimiter()) {
            self.phase = Phase::Finished;
            self.delimiter_end = Some(self.generated.len());
            true
        } else {
            false
        }
    }

    /// Closes a trace that ran out of thinking budget by appending the delimiter.
    pub fn force_close(&mut self, vocab: &Vocabulary) {
        debug_assert_eq!(self.phase, Phase::Thinking);
        self.generated.extend_from_slice(vocab.delimiter());
        self.phase = Phase::Finished;
        self.delimiter_end = Some(self.generated.len());
    }

    pub(crate) fn with_reasoning(&self, reasoning: Vec<TokenId>, phase: Phase) -> Self {
        let end = reasoning.len();
        Self { prompt: self.prompt.clone(), generated: reasoning, phase, delimiter_end: Some(end) }
    }
}

/// The K selected traces plus the shared answer prefix being decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSession {
    traces: Vec<Trace>,
    answer: Vec<TokenId>,
    step: usize,
}

impl EnsembleSession {
    pub fn new(traces: Vec<Trace>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Session("at least one trace is required".into()));
        }
        if let Some(i) = traces.iter().position(|t| !t.is_ready()) {
            return Err(Error::Session(format!("trace {i} has not reached its delimiter")));
        }
        Ok(Self { traces, answer: Vec::new(), step: 0 })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn k(&self) -> usize {
        self.traces.len()
    }

    pub fn answer(&self) -> &[TokenId] {
        &self.answer
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn push(&mut self, token: TokenId) {
        self.answer.push(token);
        self.step += 1;
    }

    /// prompt ‖ reasoning ‖ answer for every trace, in trace order.
    pub fn contexts(&self) -> Vec<Vec<TokenId>> {
        self.traces
            .iter()
            .map(|t| {
                let mut ctx = t.context();
                ctx.extend_from_slice(&self.answer);
                ctx
            })
            .collect()
    }
}

/// Decoding policy for both phases. Defaults follow the commonly recommended
/// settings for reasoning models (temperature 0.6, no nucleus truncation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SamplingPolicyRepr")]
pub struct SamplingPolicy {
    pub temp_think: f64,
    pub temp_answer: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub repetition_penalty: f64,
    pub seed: u64,
    pub greedy: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingPolicyRepr {
    #[serde(default = "default_temperature")]
    temp_think: f64,
    #[serde(default = "default_temperature")]
    temp_answer: f64,
    #[serde(default)]
    top_k: Option<usize>,
    #[serde(default)]
    top_p: Option<f64>,
    #[serde(default = "default_penalty")]
    repetition_penalty: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    greedy: bool,
}

fn default_temperature() -> f64 {
    0.6
}

fn default_penalty() -> f64 {
    1.0
}

impl TryFrom<SamplingPolicyRepr> for SamplingPolicy {
    type Error = Error;

    fn try_from(r: SamplingPolicyRepr) -> Result<Self> {
        let p = SamplingPolicy {
            temp_think: r.temp_think,
            temp_answer: r.temp_answer,
            top_k: r.top_k,
            top_p: r.top_p,
            repetition_penalty: r.repetition_penalty,
            seed: r.seed,
            greedy: r.greedy,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            temp_think: default_temperature(),
            temp_answer: default_temperature(),
            top_k: None,
            top_p: None,
            repetition_penalty: default_penalty(),
            seed: 0,
            greedy: false,
        }
    }
}

impl SamplingPolicy {
    /// Settings used for open-ended generation such as code: nucleus 0.95.
    pub fn open_ended() -> Self {
        Self { top_p: Some(0.95), ..Self::default() }
    }

    pub fn greedy() -> Self {
        Self { greedy: true, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("temp_think", self.temp_think), ("temp_answer", self.temp_answer)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Policy(format!("{name} must be positive and finite, got {t}")));
            }
        }
        if self.top_k == Some(0) {
            return Err(Error::Policy("top_k must be >= 1".into()));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Policy(format!("top_p must lie in (0, 1], got {p}")));
            }
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::Policy(format!(
                "repetition_penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    DirectMerge,
    EarlyReady,
    ShortestK,
}

/// Which traces to merge and when to start the merged answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StrategyConfigRepr")]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub trim_suffix: bool,
    pub k: usize,
    pub n: usize,
    pub max_think_tokens: usize,
    pub max_answer_tokens: usize,
    pub trim_min_block: usize,
    pub trim_max_block: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyConfigRepr {
    kind: StrategyKind,
    #[serde(default)]
    trim_suffix: bool,
    k: usize,
    #[serde(default)]
    n: Option<usize>,
    max_think_tokens: usize,
    max_answer_tokens: usize,
    #[serde(default = "default_trim_min")]
    trim_min_block: usize,
    #[serde(default = "default_trim_max")]
    trim_max_block: usize,
}

fn default_trim_min() -> usize {
    2
}

fn default_trim_max() -> usize {
    64
}

impl TryFrom<StrategyConfigRepr> for StrategyConfig {
    type Error = Error;

    fn try_from(r: StrategyConfigRepr) -> Result<Self> {
        let c = StrategyConfig {
            kind: r.kind,
            trim_suffix: r.trim_suffix,
            k: r.k,
            n: r.n.unwrap_or(r.k),
            max_think_tokens: r.max_think_tokens,
            max_answer_tokens: r.max_answer_tokens,
            trim_min_block: r.trim_min_block,
            trim_max_block: r.trim_max_block,
        };
        c.validate()?;
        Ok(c)
    }
}

impl StrategyConfig {
    pub fn direct_merge(k: usize, max_think_tokens: usize, max_answer_tokens: usize) -> Self {
        Self {
            kind: StrategyKind::DirectMerge,
            trim_suffix: false,
            k,
            n: k,
            max_think_tokens,
            max_answer_tokens,
            trim_min_block: default_trim_min(),
            trim_max_block: default_trim_max(),
        }
    }

    pub fn early_ready(k: usize, n: usize, max_think_tokens: usize, max_answer_tokens: usize) -> Self {
        Self { kind: StrategyKind::EarlyReady, n, ..Self::direct_merge(k, max_think_tokens, max_answer_tokens) }
    }

    pub fn shortest_k(k: usize, n: usize, max_think_tokens: usize, max_answer_tokens: usize) -> Self {
        Self { kind: StrategyKind::ShortestK, n, ..Self::direct_merge(k, max_think_tokens, max_answer_tokens) }
    }

    pub fn with_trimming(mut self, on: bool) -> Self {
        self.trim_suffix = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Strategy("k must be >= 1".into()));
        }
        match self.kind {
            StrategyKind::DirectMerge if self.n != self.k => {
                return Err(Error::Strategy(format!("direct_merge requires n == k (n={}, k={})", self.n, self.k)));
            }
            StrategyKind::EarlyReady if self.n <= self.k => {
                return Err(Error::Strategy(format!("early_ready requires n > k (n={}, k={})", self.n, self.k)));
            }
            StrategyKind::ShortestK if self.n < self.k => {
                return Err(Error::Strategy(format!("shortest_k requires n >= k (n={}, k={})", self.n, self.k)));
            }
            _ => {}
        }
        if self.max_think_tokens == 0 || self.max_answer_tokens == 0 {
            return Err(Error::Strategy("token budgets must be >= 1".into()));
        }
        if self.trim_min_block == 0 || self.trim_min_block > self.trim_max_block {
            return Err(Error::Strategy(format!(
                "trim blocks need 1 <= min <= max (min={}, max={})",
                self.trim_min_block, self.trim_max_block
            )));
        }
        Ok(())
    }

    pub fn stop_rule(&self, vocab: &Vocabulary) -> StopRule {
        StopRule { eos_id: vocab.eos_id(), max_answer_tokens: self.max_answer_tokens }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Length,
}

/// Answer-phase termination: end-of-sequence or length, whichever comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub eos_id: TokenId,
    pub max_answer_tokens: usize,
}

impl StopRule {
    pub fn check(&self, answer: &[TokenId]) -> Option<StopReason> {
        if answer.last() == Some(&self.eos_id) {
            Some(StopReason::Eos)
        } else if answer.len() >= self.max_answer_tokens {
            Some(StopReason::Length)
        } else {
            None
        }
    }
}
