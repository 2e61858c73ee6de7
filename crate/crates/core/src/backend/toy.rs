//! Deterministic stand-ins for a language model.
//!
//! # Hash backend
//!
//! For a context `c` the logits are defined bit-exactly:
//!
//! 1. take the last `min(len(c), m)` ids, each serialized as 4 little-endian
//!    bytes, and hash them with FNV-1a-64 (offset `0xcbf29ce484222325`, prime
//!    `0x100000001b3`); xor with the backend seed to get `key`;
//! 2. for every id `v`, `x = splitmix64(key ^ v)` and `u = (x >> 11) * 2^-53`;
//!    the logit is `(10u - 5)` rounded to f32;
//! 3. while `len(c) >= force_after` and `c` does not yet contain the
//!    delimiter, add 20 to the next delimiter id: the one that extends the
//!    longest delimiter prefix `c` already ends with (the first delimiter id if
//!    none).
//!
//! The bias makes thinking terminate; with a single-token delimiter it is
//! always the first delimiter id.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError};
use crate::logits::LogitVector;
use crate::mix::{fnv1a64, splitmix64, unit_f64};
use crate::scheduler::find_delimiter;
use crate::types::{TokenId, Vocabulary};

pub const FORCE_BIAS: f32 = 20.0;

/// Logits of the hash backend for one context (see the module docs).
pub fn toy_hash_logits(
    context: &[TokenId],
    seed: u64,
    vocab_size: u32,
    m: usize,
    force_after: usize,
    delimiter: &[TokenId],
) -> LogitVector {
    let window = &context[context.len() - context.len().min(m)..];
    let bytes: Vec<u8> = window.iter().flat_map(|t| t.to_le_bytes()).collect();
    let key = fnv1a64(&bytes) ^ seed;
    let mut values: Vec<f32> =
        (0..vocab_size as u64).map(|v| (10.0 * unit_f64(splitmix64(key ^ v)) - 5.0) as f32).collect();
    if context.len() >= force_after && !delimiter.is_empty() && find_delimiter(context, delimiter).is_none() {
        let partial = (1..delimiter.len()).rev().find(|&j| context.ends_with(&delimiter[..j])).unwrap_or(0);
        if let Some(slot) = values.get_mut(delimiter[partial] as usize) {
            *slot += FORCE_BIAS;
        }
    }
    LogitVector::new(values).expect("hash logits are finite")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashParams {
    pub seed: u64,
    pub vocab_size: u32,
    pub m: usize,
    pub force_after: usize,
    pub delimiter: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct HashBackend {
    params: HashParams,
    descriptor: BackendDescriptor,
}

pub const DEFAULT_MAX_CONTEXT: usize = 1 << 16;

impl HashBackend {
    pub fn new(params: HashParams, eos_id: TokenId, pad_id: TokenId, max_context: usize) -> Result<Self, BackendError> {
        if params.m == 0 {
            return Err(BackendError::Script("hash window m must be >= 1".into()));
        }
        let descriptor =
            BackendDescriptor { vocab_size: params.vocab_size, eos_id, pad_id, supports_mask: true, max_context };
        Ok(Self { params, descriptor })
    }

    /// A hash backend serving `vocab`, forcing its delimiter once contexts
    /// reach `force_after` tokens.
    pub fn for_vocabulary(vocab: &Vocabulary, seed: u64, m: usize, force_after: usize) -> Result<Self, BackendError> {
        let params =
            HashParams { seed, vocab_size: vocab.size(), m, force_after, delimiter: vocab.delimiter().to_vec() };
        Self::new(params, vocab.eos_id(), vocab.pad_id(), DEFAULT_MAX_CONTEXT)
    }

    pub fn params(&self) -> &HashParams {
        &self.params
    }

    pub fn logits(&self, context: &[TokenId]) -> LogitVector {
        let p = &self.params;
        toy_hash_logits(context, p.seed, p.vocab_size, p.m, p.force_after, &p.delimiter)
    }
}

impl Backend for HashBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError> {
        self.descriptor.check_contexts(contexts)?;
        Ok(contexts.iter().map(|c| self.logits(c)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub suffix: Vec<TokenId>,
    pub logits: Vec<f32>,
}

/// A hand-written logits table: rows keyed by context suffix, plus a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub vocab_size: u32,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    #[serde(default = "default_script_context")]
    pub max_context: usize,
    pub default: Vec<f32>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

fn default_script_context() -> usize {
    DEFAULT_MAX_CONTEXT
}

impl Script {
    pub fn validate(&self) -> Result<(), BackendError> {
        let v = self.vocab_size as usize;
        let check_row = |row: &[f32], what: &str| {
            if row.len() != v {
                return Err(BackendError::Script(format!("{what} has {} entries, vocab_size is {v}", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(BackendError::Script(format!("{what} contains a non-finite logit")));
            }
            Ok(())
        };
        check_row(&self.default, "default row")?;
        for (i, rule) in self.rules.iter().enumerate() {
            check_row(&rule.logits, &format!("rule {i}"))?;
            if rule.suffix.iter().any(|&t| t >= self.vocab_size) {
                return Err(BackendError::Script(format!("rule {i} suffix has an id outside the vocabulary")));
            }
            if self.rules[..i].iter().any(|r| r.suffix == rule.suffix) {
                return Err(BackendError::Script(format!("rule {i} repeats an earlier suffix")));
            }
        }
        Ok(())
    }
}

/// Row of the longest rule whose suffix ends the context, else the default row.
pub fn toy_scripted_logits(context: &[TokenId], script: &Script) -> LogitVector {
    let row = script
        .rules
        .iter()
        .filter(|r| context.ends_with(&r.suffix))
        .max_by_key(|r| r.suffix.len())
        .map_or(&script.default, |r| &r.logits);
    LogitVector::new(row.clone()).expect("validated script rows are finite")
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
    descriptor: BackendDescriptor,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, BackendError> {
        script.validate()?;
        let descriptor = BackendDescriptor {
            vocab_size: script.vocab_size,
            eos_id: script.eos_id,
            pad_id: script.pad_id,
            supports_mask: true,
            max_context: script.max_context,
        };
        Ok(Self { script, descriptor })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("cannot read {}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("cannot parse {}: {e}", path.display())))?;
        Self::new(script)
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

impl Backend for ScriptedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError> {
        self.descriptor.check_contexts(contexts)?;
        Ok(contexts.iter().map(|c| toy_scripted_logits(c, &self.script)).collect())
    }
}
