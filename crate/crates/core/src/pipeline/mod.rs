//! End-to-end decoding in two shapes.
//!
//! * **Two-stage**: sample the trace pool to completion, select (and
//!   optionally trim) K traces, left-pad their contexts into one batch, then
//!   decode a single shared answer by merging the K next-token predictions at
//!   every step.
//! * **One-step**: run the K streams as one masked batch from the start.
//!   Streams that finish thinking early emit masked pad tokens until the last
//!   one reaches its delimiter; from then on every step merges all K streams
//!   and writes the shared token into each row.
//!
//! Both shapes draw from the same random streams, so on any backend honoring
//! the mask contract they produce identical answers.
//!
//! Seeds: trace `i` thinks with `Rng::new(seed ^ splitmix64(i))`; the merged
//! answer draws from `Rng::new(seed)`; the optional solo answer of trace `i`
//! draws from `Rng::new(splitmix64(seed ^ splitmix64(i)))`.

mod batch;
mod record;

pub use batch::{align_contexts, PaddedBatch};
pub use record::{render_tokens, DecodeRecord, MergeMode, PipelineKind, StepRecord, TraceRecord, SCHEMA_VERSION};

use crate::backend::{Backend, BackendError};
use crate::error::{Error, Result};
use crate::logits::{merge_logits, merge_probs, LogitVector};
use crate::mix::splitmix64;
use crate::sampling::{sample_next, Choice, Rng};
use crate::scheduler::{select_traces, trim_trace, Completion, TracePool};
use crate::types::{
    EnsembleSession, SamplingPolicy, StopReason, StrategyConfig, StrategyKind, TokenId, Trace, Vocabulary,
};

pub fn thinking_seed(seed: u64, index: usize) -> u64 {
    seed ^ splitmix64(index as u64)
}

pub fn solo_seed(seed: u64, index: usize) -> u64 {
    splitmix64(thinking_seed(seed, index))
}

type Selection = (Vec<usize>, Vec<Trace>, Vec<(usize, usize)>);

/// Result of the merged answer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutcome {
    pub answer: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    pub stop_reason: Option<StopReason>,
    pub error: Option<BackendError>,
}

/// A single-sequence decode: one trace thinks, then answers alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainDecode {
    pub trace: Trace,
    pub answer: Vec<TokenId>,
}

/// Drives one backend under fixed vocabulary, strategy and policy.
pub struct Decoder<'a, B: Backend + ?Sized> {
    backend: &'a B,
    vocab: Vocabulary,
    strategy: StrategyConfig,
    policy: SamplingPolicy,
    merge_mode: MergeMode,
    solo_answers: bool,
}

impl<'a, B: Backend + ?Sized> Decoder<'a, B> {
    pub fn new(backend: &'a B, vocab: Vocabulary, strategy: StrategyConfig, policy: SamplingPolicy) -> Result<Self> {
        policy.validate()?;
        strategy.validate()?;
        backend.descriptor().check_vocabulary(&vocab)?;
        if strategy.max_think_tokens < vocab.delimiter().len() {
            return Err(Error::Strategy(format!(
                "max_think_tokens {} cannot hold the {}-token delimiter",
                strategy.max_think_tokens,
                vocab.delimiter().len()
            )));
        }
        Ok(Self { backend, vocab, strategy, policy, merge_mode: MergeMode::Logits, solo_answers: false })
    }

    pub fn with_merge_mode(mut self, mode: MergeMode) -> Self {
        self.merge_mode = mode;
        self
    }

    /// Also decode every selected trace's own answer (for majority voting).
    pub fn with_solo_answers(mut self, on: bool) -> Self {
        self.solo_answers = on;
        self
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn policy(&self) -> &SamplingPolicy {
        &self.policy
    }

    fn check_prompt(&self, prompt: &[TokenId]) -> Result<()> {
        if prompt.is_empty() {
            return Err(Error::Pipeline("prompt must contain at least one token".into()));
        }
        if let Some(&t) = prompt.iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(Error::Pipeline(format!("prompt token {t} outside the vocabulary")));
        }
        Ok(())
    }

    fn budget_exhausted(&self, trace: &Trace) -> bool {
        trace.generated().len() + self.vocab.delimiter().len() >= self.strategy.max_think_tokens
    }

    fn check_rows(&self, rows: &[LogitVector], expected: usize) -> Result<(), BackendError> {
        if rows.len() != expected {
            return Err(BackendError::Protocol(format!("expected {expected} logit rows, got {}", rows.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != self.vocab.size() as usize) {
            return Err(BackendError::Protocol(format!("logit row of length {}", r.len())));
        }
        Ok(())
    }

    fn think_step(&self, trace: &mut Trace, logits: &LogitVector, rng: &mut Rng) -> Result<bool> {
        let choice = sample_next(logits, trace.generated(), self.policy.temp_think, &self.policy, rng)?;
        Ok(trace.push_thinking(choice.token, &self.vocab))
    }

    /// Samples the trace pool until the strategy can select. Each trace
    /// thinks independently from its own seed; traces that exhaust the budget
    /// are closed with the delimiter. On a backend failure the partial pool is
    /// returned with the error.
    fn think(&self, prompt: &[TokenId]) -> Result<(TracePool, usize, Option<BackendError>)> {
        let n = self.strategy.n;
        let mut pool = TracePool::new(vec![Trace::thinking(prompt.to_vec()); n]);
        let mut rngs: Vec<Rng> = (0..n).map(|i| Rng::new(thinking_seed(self.policy.seed, i))).collect();
        let mut step = 0;
        while select_traces(&pool, &self.strategy).is_err() {
            step += 1;
            let mut need = Vec::new();
            for i in 0..n {
                if pool.traces()[i].is_ready() {
                    continue;
                }
                if self.budget_exhausted(&pool.traces()[i]) {
                    pool.trace_mut(i).force_close(&self.vocab);
                    pool.record(Completion { index: i, step, forced: true });
                } else {
                    need.push(i);
                }
            }
            if need.is_empty() {
                continue;
            }
            let contexts: Vec<Vec<TokenId>> = need.iter().map(|&i| pool.traces()[i].context()).collect();
            let rows = match self.backend.next_logits(&contexts).and_then(|r| self.check_rows(&r, need.len()).map(|_| r)) {
                Ok(rows) => rows,
                Err(e) => return Ok((pool, step, Some(e))),
            };
            for (&i, z) in need.iter().zip(&rows) {
                if self.think_step(pool.trace_mut(i), z, &mut rngs[i])? {
                    pool.record(Completion { index: i, step, forced: false });
                }
            }
        }
        Ok((pool, step, None))
    }

    /// Samples the N-trace pool (stage one of the two-stage pipeline).
    pub fn generate_thinking(&self, prompt: &[TokenId]) -> Result<TracePool> {
        self.check_prompt(prompt)?;
        match self.think(prompt)? {
            (pool, _, None) => Ok(pool),
            (_, _, Some(e)) => Err(e.into()),
        }
    }

    /// Selected traces after optional trimming, plus (index, trimmed length)
    /// for every trace trimming changed.
    fn selected_traces(&self, pool: &TracePool) -> Result<Selection> {
        let selected = select_traces(pool, &self.strategy).map_err(|e| Error::Pipeline(e.to_string()))?;
        let mut traces = Vec::with_capacity(selected.len());
        let mut trimmed = Vec::new();
        for &i in &selected {
            let t = &pool.traces()[i];
            if self.strategy.trim_suffix {
                let tt = trim_trace(t, &self.vocab, self.strategy.trim_min_block, self.strategy.trim_max_block)?;
                if tt.reasoning_len() != t.reasoning_len() {
                    trimmed.push((i, tt.reasoning_len().expect("trimmed trace is finished")));
                }
                traces.push(tt);
            } else {
                traces.push(t.clone());
            }
        }
        Ok((selected, traces, trimmed))
    }

    fn merge_and_sample(&self, rows: &[LogitVector], answer: &[TokenId], rng: &mut Rng) -> Result<Choice> {
        match self.merge_mode {
            MergeMode::Logits => {
                let merged = merge_logits(rows)?;
                sample_next(&merged, answer, self.policy.temp_answer, &self.policy, rng)
            }
            MergeMode::Probs => {
                let merged = merge_probs(rows, self.policy.temp_answer)?;
                sample_next(&merged.ln(), answer, 1.0, &self.policy, rng)
            }
        }
    }

    /// The shared-answer loop. With a batch the backend sees padded rows and
    /// the mask; without one it sees the logical contexts.
    fn answer_loop(&self, mut session: EnsembleSession, mut batch: Option<PaddedBatch>, rng: &mut Rng) -> Result<AnswerOutcome> {
        let stop = self.strategy.stop_rule(&self.vocab);
        let mut steps = Vec::new();
        let k = session.k();
        loop {
            if let Some(reason) = stop.check(session.answer()) {
                return Ok(AnswerOutcome { answer: session.answer().to_vec(), steps, stop_reason: Some(reason), error: None });
            }
            let rows = match &batch {
                Some(b) => self.backend.next_logits_masked(b),
                None => self.backend.next_logits(&session.contexts()),
            }
            .and_then(|r| self.check_rows(&r, k).map(|_| r));
            let rows = match rows {
                Ok(r) => r,
                Err(e) => {
                    return Ok(AnswerOutcome { answer: session.answer().to_vec(), steps, stop_reason: None, error: Some(e) })
                }
            };
            let choice = self.merge_and_sample(&rows, session.answer(), rng)?;
            session.push(choice.token);
            if let Some(b) = batch.as_mut() {
                b.push_shared(choice.token);
            }
            steps.push(choice.into());
        }
    }

    fn single_answer(&self, trace: &Trace, rng: &mut Rng) -> Result<Vec<TokenId>> {
        let session = EnsembleSession::new(vec![trace.clone()])?;
        let out = self.answer_loop(session, None, rng)?;
        match out.error {
            Some(e) => Err(e.into()),
            None => Ok(out.answer),
        }
    }

    /// Stage two: select, trim, align and decode the merged answer.
    pub fn decode_answer(&self, pool: &TracePool, rng: &mut Rng) -> Result<(Vec<TokenId>, DecodeRecord)> {
        let (selected, traces, trimmed) = self.selected_traces(pool)?;
        let batch = if self.backend.descriptor().supports_mask {
            Some(align_contexts(&traces, &self.vocab)?)
        } else {
            None
        };
        let session = EnsembleSession::new(traces.clone())?;
        let outcome = self.answer_loop(session, batch, rng)?;
        let merge_start = crate::scheduler::merge_start_step(pool.completions(), pool.len(), &self.strategy);
        let record = self.record(pool, &selected, &traces, &trimmed, merge_start, PipelineKind::TwoStage, outcome)?;
        Ok((record.answer.clone(), record))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        pool: &TracePool,
        selected: &[usize],
        traces: &[Trace],
        trimmed: &[(usize, usize)],
        merge_start_step: Option<usize>,
        pipeline: PipelineKind,
        outcome: AnswerOutcome,
    ) -> Result<DecodeRecord> {
        let solo_answers = if self.solo_answers && outcome.error.is_none() {
            let mut out = Vec::with_capacity(traces.len());
            for (&i, t) in selected.iter().zip(traces) {
                let mut rng = Rng::new(solo_seed(self.policy.seed, i));
                match self.single_answer(t, &mut rng) {
                    Ok(a) => out.push(render_tokens(&a, &self.vocab)),
                    Err(e) => return Ok(self.aborted(pool, pipeline, e.to_string())),
                }
            }
            Some(out)
        } else {
            None
        };
        Ok(DecodeRecord {
            schema_version: SCHEMA_VERSION,
            id: String::new(),
            config_hash: String::new(),
            seed: self.policy.seed,
            strategy: self.strategy.kind,
            k: self.strategy.k,
            n: self.strategy.n,
            merge_mode: self.merge_mode,
            pipeline,
            prompt: pool.traces().first().map(|t| t.prompt().to_vec()).unwrap_or_default(),
            traces: record::trace_records(pool, selected, trimmed),
            selected: selected.to_vec(),
            merge_start_step,
            answer_text: render_tokens(&outcome.answer, &self.vocab),
            answer: outcome.answer,
            stop_reason: outcome.stop_reason,
            steps: outcome.steps,
            solo_answers,
            valid: outcome.error.is_none(),
            error: outcome.error.map(|e| e.to_string()),
        })
    }

    fn aborted(&self, pool: &TracePool, pipeline: PipelineKind, error: String) -> DecodeRecord {
        DecodeRecord {
            schema_version: SCHEMA_VERSION,
            id: String::new(),
            config_hash: String::new(),
            seed: self.policy.seed,
            strategy: self.strategy.kind,
            k: self.strategy.k,
            n: self.strategy.n,
            merge_mode: self.merge_mode,
            pipeline,
            prompt: pool.traces().first().map(|t| t.prompt().to_vec()).unwrap_or_default(),
            traces: record::trace_records(pool, &[], &[]),
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

    /// Two-stage pipeline. Backend failures yield an invalid record rather
    /// than an error; configuration problems are errors.
    pub fn run_two_stage(&self, prompt: &[TokenId]) -> Result<DecodeRecord> {
        self.check_prompt(prompt)?;
        let (pool, _, error) = self.think(prompt)?;
        if let Some(e) = error {
            return Ok(self.aborted(&pool, PipelineKind::TwoStage, e.to_string()));
        }
        let mut rng = Rng::new(self.policy.seed);
        Ok(self.decode_answer(&pool, &mut rng)?.1)
    }

    /// One-step pipeline over a masked batch. Only direct merge is supported,
    /// and the backend must accept masks.
    pub fn run_one_step(&self, prompt: &[TokenId]) -> Result<DecodeRecord> {
        if self.strategy.kind != StrategyKind::DirectMerge {
            return Err(Error::Pipeline(format!(
                "one_step pipeline requires direct_merge, got {:?}",
                self.strategy.kind
            )));
        }
        if !self.backend.descriptor().supports_mask {
            return Err(Error::Pipeline("one_step pipeline requires a backend with mask support".into()));
        }
        if self.strategy.trim_suffix {
            return Err(Error::Pipeline("one_step pipeline cannot trim reasoning; set trim_suffix = false".into()));
        }
        self.check_prompt(prompt)?;
        let k = self.strategy.k;
        let pad = self.vocab.pad_id();
        let mut pool = TracePool::new(vec![Trace::thinking(prompt.to_vec()); k]);
        let mut streams: Vec<Vec<(TokenId, bool)>> = vec![prompt.iter().map(|&t| (t, true)).collect(); k];
        let mut rngs: Vec<Rng> = (0..k).map(|i| Rng::new(thinking_seed(self.policy.seed, i))).collect();
        let mut step = 0;
        while pool.ready().len() < k {
            step += 1;
            let mut need = Vec::new();
            for (i, stream) in streams.iter_mut().enumerate() {
                let trace = &pool.traces()[i];
                if trace.is_ready() {
                    stream.push((pad, false));
                } else if self.budget_exhausted(trace) {
                    pool.trace_mut(i).force_close(&self.vocab);
                    pool.record(Completion { index: i, step, forced: true });
                    stream.extend(self.vocab.delimiter().iter().map(|&t| (t, true)));
                } else {
                    need.push(i);
                }
            }
            if need.is_empty() {
                continue;
            }
            let batch = PaddedBatch::from_streams(&streams, pad)?;
            let rows = match self.backend.next_logits_masked(&batch).and_then(|r| self.check_rows(&r, k).map(|_| r)) {
                Ok(rows) => rows,
                Err(e) => return Ok(self.aborted(&pool, PipelineKind::OneStep, e.to_string())),
            };
            for &i in &need {
                if self.think_step(pool.trace_mut(i), &rows[i], &mut rngs[i])? {
                    pool.record(Completion { index: i, step, forced: false });
                }
                let token = *pool.traces()[i].generated().last().expect("just pushed");
                streams[i].push((token, true));
            }
        }
        let selected: Vec<usize> = (0..k).collect();
        let traces = pool.traces().to_vec();
        let session = EnsembleSession::new(traces.clone())?;
        let batch = PaddedBatch::from_streams(&streams, pad)?;
        let mut rng = Rng::new(self.policy.seed);
        let outcome = self.answer_loop(session, Some(batch), &mut rng)?;
        self.record(&pool, &selected, &traces, &[], Some(step), PipelineKind::OneStep, outcome)
    }

    pub fn run(&self, prompt: &[TokenId], pipeline: PipelineKind) -> Result<DecodeRecord> {
        match pipeline {
            PipelineKind::TwoStage => self.run_two_stage(prompt),
            PipelineKind::OneStep => self.run_one_step(prompt),
        }
    }

    /// Plain single-sequence decoding of stream `stream`: it thinks from the
    /// same seed as trace `stream` of an ensemble, then answers alone from the
    /// answer seed.
    pub fn decode_plain(&self, prompt: &[TokenId], stream: usize) -> Result<PlainDecode> {
        self.check_prompt(prompt)?;
        let mut trace = Trace::thinking(prompt.to_vec());
        let mut rng = Rng::new(thinking_seed(self.policy.seed, stream));
        while !trace.is_ready() {
            if self.budget_exhausted(&trace) {
                trace.force_close(&self.vocab);
                break;
            }
            let rows = self.backend.next_logits(&[trace.context()])?;
            self.check_rows(&rows, 1)?;
            self.think_step(&mut trace, &rows[0], &mut rng)?;
        }
        let answer = self.single_answer(&trace, &mut Rng::new(self.policy.seed))?;
        Ok(PlainDecode { trace, answer })
    }
}
