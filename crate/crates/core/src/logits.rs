//! Logit-vector numerics: the mean-of-logits merge, the probability-merge
//! ablation, and a stabilized softmax.
//!
//! Reductions are deterministic. Inputs are 32-bit, sums are carried in
//! 64-bit in ascending trace-index order, divided once by K, then rounded back
//! to 32-bit. For the value ranges produced by language models the 64-bit sum
//! of a handful of 32-bit values is exact, so the merge is also insensitive to
//! input order.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenId;

/// Dense pre-softmax scores over the vocabulary.
///
/// Vectors built with [`LogitVector::new`] are finite. Processors inside the
/// sampler may mask entries with `-inf`, which softmax maps to zero mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f32>);

impl LogitVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Wraps values that may contain `-inf` mask entries.
    pub(crate) fn masked(values: Vec<f32>) -> Self {
        debug_assert!(values.iter().all(|v| !v.is_nan() && *v != f32::INFINITY));
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest id on ties.
    pub fn argmax(&self) -> Option<TokenId> {
        argmax_by(self.0.iter().map(|&v| v as f64))
    }
}

/// A probability distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite { index });
        }
        let sum: f64 = values.iter().sum();
        if sum == 0.0 {
            return Err(Error::ZeroMass);
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Batch(format!("probabilities sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> Option<TokenId> {
        argmax_by(self.0.iter().copied())
    }

    /// Natural log of every entry, as a logit vector (`-inf` where p = 0).
    pub fn ln(&self) -> LogitVector {
        LogitVector::masked(self.0.iter().map(|&p| p.ln() as f32).collect())
    }
}

fn argmax_by(values: impl Iterator<Item = f64>) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i as TokenId)
}

static REDUCTION_FAULT: AtomicBool = AtomicBool::new(false);

/// Debug hook used by the self-test to prove the permutation suite can fail:
/// while enabled, [`merge_logits`] folds inputs with an order-dependent
/// running average instead of the arithmetic mean.
#[doc(hidden)]
pub fn inject_reduction_fault(enabled: bool) {
    REDUCTION_FAULT.store(enabled, Ordering::SeqCst);
}

fn check_inputs(vectors: &[LogitVector]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::Empty("logit vector list"))?;
    let len = first.len();
    for v in vectors {
        if v.len() != len {
            return Err(Error::LengthMismatch { expected: len, actual: v.len() });
        }
        if let Some(index) = v.values().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(len)
}

/// Component-wise arithmetic mean of the K per-trace logit vectors.
pub fn merge_logits(vectors: &[LogitVector]) -> Result<LogitVector> {
    let len = check_inputs(vectors)?;
    let mut acc = vec![0f64; len];
    if REDUCTION_FAULT.load(Ordering::Relaxed) {
        for (k, v) in vectors.iter().enumerate() {
            for (a, &x) in acc.iter_mut().zip(v.values()) {
                *a = if k == 0 { x as f64 } else { (*a + x as f64) / 2.0 };
            }
        }
        return Ok(LogitVector(acc.into_iter().map(|a| a as f32).collect()));
    }
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v.values()) {
            *a += x as f64;
        }
    }
    let k = vectors.len() as f64;
    Ok(LogitVector(acc.into_iter().map(|a| (a / k) as f32).collect()))
}

/// Mean of the per-trace tempered softmax distributions (the prob-merge
/// ablation). The temperature is applied inside each softmax; the average is
/// not re-tempered.
pub fn merge_probs(vectors: &[LogitVector], temperature: f64) -> Result<ProbVector> {
    let len = check_inputs(vectors)?;
    check_temperature(temperature)?;
    let mut acc = vec![0f64; len];
    for v in vectors {
        let p = softmax_values(v.values(), temperature);
        for (a, x) in acc.iter_mut().zip(p) {
            *a += x;
        }
    }
    let k = vectors.len() as f64;
    Ok(ProbVector(acc.into_iter().map(|a| a / k).collect()))
}

/// softmax(logits / temperature), stabilized by subtracting the maximum.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<ProbVector> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::Empty("logit vector"));
    }
    if logits.values().iter().all(|v| *v == f32::NEG_INFINITY) {
        return Err(Error::ZeroMass);
    }
    Ok(ProbVector(softmax_values(logits.values(), temperature)))
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(t))
    }
}

fn softmax_values(values: &[f32], temperature: f64) -> Vec<f64> {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = values
        .iter()
        .map(|&v| if v == f32::NEG_INFINITY { 0.0 } else { ((v as f64 - max) / temperature).exp() })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
