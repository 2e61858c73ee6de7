//! The logit-processor stack applied after merging, and token selection.
//!
//! Processor order is fixed:
//!
//! 1. repetition penalty over the history (the shared answer prefix when
//!    merging, a trace's own tokens while thinking);
//! 2. top-k, as a `-inf` mask on logits;
//! 3. softmax at the phase temperature;
//! 4. top-p on the resulting probabilities;
//! 5. greedy argmax, or an inverse-CDF draw.
//!
//! # Random numbers
//!
//! [`Rng`] is xoshiro256** whose 256-bit state is filled from the 64-bit seed
//! by four successive splitmix64 outputs. A draw takes one `u64`, keeps the top
//! 53 bits and scales by 2^-53. Sampling scans token ids in ascending order and
//! returns the first id whose cumulative mass exceeds the draw. Greedy
//! selection never touches the generator.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::logits::{softmax, LogitVector, ProbVector};
use crate::mix::unit_f64;
use crate::types::{EnsembleSession, SamplingPolicy, TokenId};

/// Seeded generator, owned by exactly one decode stream.
#[derive(Debug, Clone)]
pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }
}

/// Divides positive logits and multiplies negative ones for every token that
/// appears in `history`. Each token is penalized once regardless of how often
/// it repeats.
pub fn apply_repetition_penalty(logits: &LogitVector, history: &[TokenId], penalty: f64) -> Result<LogitVector> {
    if !(penalty >= 1.0 && penalty.is_finite()) {
        return Err(Error::Penalty(penalty));
    }
    let mut values = logits.values().to_vec();
    if penalty == 1.0 {
        return Ok(LogitVector::masked(values));
    }
    let mut seen = vec![false; values.len()];
    for &t in history {
        let t = t as usize;
        if t < values.len() && !seen[t] {
            seen[t] = true;
            let v = values[t] as f64;
            values[t] = if v > 0.0 { (v / penalty) as f32 } else { (v * penalty) as f32 };
        }
    }
    Ok(LogitVector::masked(values))
}

/// Keeps the `k` largest logits (lower id wins ties) and masks the rest.
pub fn apply_top_k(logits: &LogitVector, k: usize) -> Result<LogitVector> {
    if k == 0 {
        return Err(Error::TopK);
    }
    let values = logits.values();
    if k >= values.len() {
        return Ok(logits.clone());
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![f32::NEG_INFINITY; values.len()];
    for &i in &order[..k] {
        out[i] = values[i];
    }
    Ok(LogitVector::masked(out))
}

/// Nucleus filtering: keeps the shortest prefix of tokens, sorted by
/// descending probability (lower id first on ties), whose mass reaches `p`,
/// then renormalizes.
pub fn apply_top_p(probs: &ProbVector, p: f64) -> Result<ProbVector> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::TopP(p));
    }
    if p == 1.0 {
        return Ok(probs.clone());
    }
    let values = probs.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = values[i];
        mass += values[i];
        if mass >= p {
            break;
        }
    }
    if mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    for v in &mut out {
        *v /= mass;
    }
    Ok(ProbVector::from_raw(out))
}

/// Greedy argmax when `policy.greedy`, otherwise an inverse-CDF draw.
pub fn select_token(probs: &ProbVector, policy: &SamplingPolicy, rng: &mut Rng) -> Result<TokenId> {
    select(probs.values(), policy.greedy, rng)
}

fn select(values: &[f64], greedy: bool, rng: &mut Rng) -> Result<TokenId> {
    if !values.iter().any(|&p| p > 0.0) {
        return Err(Error::ZeroMass);
    }
    if greedy {
        return Ok(ProbVector::from_raw(values.to_vec()).argmax().expect("non-empty"));
    }
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in values.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return Ok(i as TokenId);
        }
    }
    Ok(last_positive as TokenId)
}

/// A selected token and its probability under the final (filtered) distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub token: TokenId,
    pub prob: f64,
    /// Number of tokens with non-zero probability after filtering.
    pub support: usize,
}

/// Runs the full processor stack on `logits` at the given temperature.
pub fn sample_next(
    logits: &LogitVector,
    history: &[TokenId],
    temperature: f64,
    policy: &SamplingPolicy,
    rng: &mut Rng,
) -> Result<Choice> {
    let mut z = apply_repetition_penalty(logits, history, policy.repetition_penalty)?;
    if let Some(k) = policy.top_k {
        z = apply_top_k(&z, k)?;
    }
    let mut probs = softmax(&z, temperature)?;
    if let Some(p) = policy.top_p {
        probs = apply_top_p(&probs, p)?;
    }
    let token = select(probs.values(), policy.greedy, rng)?;
    let values = probs.values();
    Ok(Choice { token, prob: values[token as usize], support: values.iter().filter(|&&p| p > 0.0).count() })
}

/// One answer step on the merged logits: the history is the shared answer
/// prefix and the temperature is the answer temperature.
pub fn process_step(
    merged: &LogitVector,
    session: &EnsembleSession,
    policy: &SamplingPolicy,
    rng: &mut Rng,
) -> Result<TokenId> {
    sample_next(merged, session.answer(), policy.temp_answer, policy, rng).map(|c| c.token)
}
